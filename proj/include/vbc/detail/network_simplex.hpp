#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace vbc::detail {

//! Primal network simplex for the uncapacitated transportation problem
//! with integer supplies and real costs. Spanning tree kept in thread
//! (preorder) representation, block-search pivoting.
class NetworkSimplex
{
public:
  //! `supply` for n sources, `demand` for m sinks (equal totals) and the
  //! n x m cost matrix in row-major order.
  NetworkSimplex(const std::vector<std::int64_t>& supply,
                 const std::vector<std::int64_t>& demand,
                 const std::vector<double>& cost)
    : n_(static_cast<int>(supply.size()))
    , m_(static_cast<int>(demand.size()))
  {
    if (cost.size() != supply.size() * demand.size()) {
      throw std::invalid_argument("cost matrix size mismatch");
    }
    std::int64_t total_s = 0, total_d = 0;
    for (auto s : supply) {
      total_s += s;
    }
    for (auto d : demand) {
      total_d += d;
    }
    if (total_s != total_d) {
      throw std::invalid_argument("supplies and demands must balance");
    }
    node_num_ = n_ + m_;
    arc_num_ = n_ * m_;
    all_arc_num_ = arc_num_ + node_num_;
    root_ = node_num_;

    source_.resize(all_arc_num_);
    target_.resize(all_arc_num_);
    cost_.resize(all_arc_num_);
    flow_.assign(all_arc_num_, 0);
    state_.assign(all_arc_num_, state_lower);

    double max_cost = 0.0;
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < m_; ++j) {
        const int e = i * m_ + j;
        source_[e] = i;
        target_[e] = n_ + j;
        cost_[e] = cost[static_cast<std::size_t>(e)];
        max_cost = std::max(max_cost, std::fabs(cost_[e]));
      }
    }
    eps_ = 1e-12 * (1.0 + max_cost);
    const double art_cost = (max_cost + 1.0) * node_num_;

    const int nodes = node_num_ + 1;
    parent_.resize(nodes);
    pred_.resize(nodes);
    thread_.resize(nodes);
    rev_thread_.resize(nodes);
    succ_num_.resize(nodes);
    last_succ_.resize(nodes);
    pred_dir_.resize(nodes);
    pi_.resize(nodes);

    parent_[root_] = -1;
    pred_[root_] = -1;
    thread_[root_] = 0;
    rev_thread_[0] = root_;
    succ_num_[root_] = nodes;
    last_succ_[root_] = root_ - 1;
    pi_[root_] = 0.0;

    for (int u = 0, e = arc_num_; u != node_num_; ++u, ++e) {
      const std::int64_t s = u < n_ ? supply[static_cast<std::size_t>(u)]
                                    : -demand[static_cast<std::size_t>(u - n_)];
      parent_[u] = root_;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      state_[e] = state_tree;
      if (s >= 0) {
        pred_dir_[u] = dir_up;
        pi_[u] = 0.0;
        source_[e] = u;
        target_[e] = root_;
        flow_[e] = s;
        cost_[e] = 0.0;
      } else {
        pred_dir_[u] = dir_down;
        pi_[u] = art_cost;
        source_[e] = root_;
        target_[e] = u;
        flow_[e] = -s;
        cost_[e] = art_cost;
      }
    }
    block_size_ = std::max(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(arc_num_)))), 10);
  }

  //! Runs the simplex; returns the optimal total cost sum(flow * cost).
  double solve(std::size_t max_iter = 100000000)
  {
    std::size_t iter = 0;
    while (find_entering_arc()) {
      if (++iter > max_iter) {
        throw std::runtime_error("network simplex: iteration limit reached");
      }
      find_join_node();
      const bool change = find_leaving_arc();
      change_flow(change);
      if (change) {
        update_tree_structure();
        update_potential();
      }
    }
    for (int e = arc_num_; e != all_arc_num_; ++e) {
      if (flow_[e] != 0) {
        throw std::runtime_error("network simplex: infeasible problem");
      }
    }
    double total = 0.0;
    for (int e = 0; e < arc_num_; ++e) {
      if (flow_[e] != 0) {
        total += static_cast<double>(flow_[e]) * cost_[e];
      }
    }
    return total;
  }

  std::int64_t flow(int i, int j) const { return flow_[i * m_ + j]; }

private:
  static constexpr int state_upper = -1;
  static constexpr int state_tree = 0;
  static constexpr int state_lower = 1;
  static constexpr int dir_down = -1;
  static constexpr int dir_up = 1;
  static constexpr std::int64_t inf = std::numeric_limits<std::int64_t>::max();

  int n_, m_;
  int node_num_{ 0 }, arc_num_{ 0 }, all_arc_num_{ 0 }, root_{ 0 };
  double eps_{ 0.0 };

  std::vector<int> source_, target_;
  std::vector<double> cost_;
  std::vector<std::int64_t> flow_;
  std::vector<int> state_;

  std::vector<int> parent_, pred_, thread_, rev_thread_, succ_num_, last_succ_, pred_dir_;
  std::vector<double> pi_;
  std::vector<int> dirty_revs_;

  int block_size_{ 10 };
  int next_arc_{ 0 };
  int in_arc_{ 0 }, join_{ 0 }, u_in_{ 0 }, v_in_{ 0 }, u_out_{ 0 }, v_out_{ 0 };
  std::int64_t delta_{ 0 };

  double reduced(int e) const
  {
    return state_[e] * (cost_[e] + pi_[source_[e]] - pi_[target_[e]]);
  }

  bool find_entering_arc()
  {
    double min = -eps_;
    bool found = false;
    int cnt = block_size_;
    int e;
    for (e = next_arc_; e != arc_num_; ++e) {
      const double c = reduced(e);
      if (c < min) {
        min = c;
        in_arc_ = e;
        found = true;
      }
      if (--cnt == 0) {
        if (found) {
          next_arc_ = e + 1 == arc_num_ ? 0 : e + 1;
          return true;
        }
        cnt = block_size_;
      }
    }
    for (e = 0; e != next_arc_; ++e) {
      const double c = reduced(e);
      if (c < min) {
        min = c;
        in_arc_ = e;
        found = true;
      }
      if (--cnt == 0) {
        if (found) {
          next_arc_ = e + 1;
          return true;
        }
        cnt = block_size_;
      }
    }
    if (found) {
      next_arc_ = e;
    }
    return found;
  }

  void find_join_node()
  {
    int u = source_[in_arc_], v = target_[in_arc_];
    while (u != v) {
      if (succ_num_[u] < succ_num_[v]) {
        u = parent_[u];
      } else {
        v = parent_[v];
      }
    }
    join_ = u;
  }

  bool find_leaving_arc()
  {
    int first, second;
    if (state_[in_arc_] == state_lower) {
      first = source_[in_arc_];
      second = target_[in_arc_];
    } else {
      first = target_[in_arc_];
      second = source_[in_arc_];
    }
    delta_ = inf;
    int result = 0;
    for (int u = first; u != join_; u = parent_[u]) {
      const int e = pred_[u];
      const std::int64_t d = pred_dir_[u] == dir_down ? inf : flow_[e];
      if (d < delta_) {
        delta_ = d;
        u_out_ = u;
        result = 1;
      }
    }
    for (int u = second; u != join_; u = parent_[u]) {
      const int e = pred_[u];
      const std::int64_t d = pred_dir_[u] == dir_up ? inf : flow_[e];
      if (d <= delta_) {
        delta_ = d;
        u_out_ = u;
        result = 2;
      }
    }
    if (result == 0) {
      throw std::runtime_error("network simplex: unbounded cycle");
    }
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
    return true;
  }

  void change_flow(bool change)
  {
    if (delta_ > 0) {
      const std::int64_t val = state_[in_arc_] * delta_;
      flow_[in_arc_] += val;
      for (int u = source_[in_arc_]; u != join_; u = parent_[u]) {
        flow_[pred_[u]] -= pred_dir_[u] * val;
      }
      for (int u = target_[in_arc_]; u != join_; u = parent_[u]) {
        flow_[pred_[u]] += pred_dir_[u] * val;
      }
    }
    if (change) {
      state_[in_arc_] = state_tree;
      state_[pred_[u_out_]] = flow_[pred_[u_out_]] == 0 ? state_lower : state_upper;
    } else {
      state_[in_arc_] = -state_[in_arc_];
    }
  }

  void update_tree_structure()
  {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    v_out_ = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? dir_up : dir_down;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      const int thread_continue =
        old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];
      int stem = u_in_;
      int par_stem = v_in_;
      int next_stem;
      int last = last_succ_[u_in_];
      int before, after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);
        before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;
        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;
        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem]
                                                         : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;
      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }
      for (int u : dirty_revs_) {
        rev_thread_[thread_[u]] = u;
      }
      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = -pred_dir_[p];
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? dir_up : dir_down;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) {
      last_succ_[u] = last_succ_out;
    }
    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = old_rev_thread;
      }
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = last_succ_out;
      }
    }
    for (int u = v_in_; u != join_; u = parent_[u]) {
      succ_num_[u] += old_succ_num;
    }
    for (int u = v_out_; u != join_; u = parent_[u]) {
      succ_num_[u] -= old_succ_num;
    }
  }

  void update_potential()
  {
    const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost_[in_arc_];
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) {
      pi_[u] += sigma;
    }
  }
};

} // namespace vbc::detail
