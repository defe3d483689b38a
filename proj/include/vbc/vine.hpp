#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "vbc/copula.hpp"
#include "vbc/core/errors.hpp"
#include "vbc/core/random.hpp"
#include "vbc/marginal.hpp"

namespace vbc {

//! Number of regular vine structures on d labelled variables,
//! d! * 2^((d-2)(d-3)/2 - 1) (one for d = 2).
inline std::uint64_t
count_structures(std::size_t d)
{
  if (d < 2) {
    throw std::invalid_argument("count_structures needs d >= 2");
  }
  constexpr auto max = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t f = 1;
  for (std::size_t k = 2; k <= d; ++k) {
    if (f > max / k) {
      throw std::overflow_error("count_structures overflows 64 bits");
    }
    f *= k;
  }
  const std::size_t e = (d - 2) * (d - 3) / 2;
  if (e == 0) {
    return std::max<std::uint64_t>(f / 2, 1);
  }
  if (e - 1 >= 63 || f > (max >> (e - 1))) {
    throw std::overflow_error("count_structures overflows 64 bits");
  }
  return f << (e - 1);
}

inline constexpr std::size_t no_parent = std::numeric_limits<std::size_t>::max();

//! Edge of a vine tree: conditioned pair (a, b) given `conditioning`.
//! Edges beyond the first tree also record the two parent edges of the
//! previous tree they join; `a` comes from `left`, `b` from `right`.
struct VineEdge
{
  std::size_t a{ 0 };
  std::size_t b{ 0 };
  std::vector<std::size_t> conditioning;
  std::size_t left{ no_parent };
  std::size_t right{ no_parent };

  bool conditions_on(std::size_t v) const { return a == v || b == v; }

  std::vector<std::size_t> all_variables() const
  {
    std::vector<std::size_t> s = conditioning;
    s.push_back(a);
    s.push_back(b);
    std::sort(s.begin(), s.end());
    return s;
  }
};

//! Regular vine structure as a sequence of edge lists.
class VineStructure
{
public:
  VineStructure() = default;

  //! Builds the structure from the first tree's variable pairs and, for
  //! each deeper tree, pairs of edge indices of the previous tree.
  static VineStructure from_pairs(
    std::size_t d,
    const std::vector<std::pair<std::size_t, std::size_t>>& first_tree,
    const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>& deeper_trees)
  {
    VineStructure s;
    s.d_ = d;
    std::vector<VineEdge> t0;
    for (auto [a, b] : first_tree) {
      VineEdge e;
      e.a = std::min(a, b);
      e.b = std::max(a, b);
      t0.push_back(e);
    }
    if (d >= 2) {
      s.trees_.push_back(std::move(t0));
    }
    for (const auto& level : deeper_trees) {
      std::vector<VineEdge> edges;
      for (auto [l, r] : level) {
        edges.push_back(s.join(s.trees_.back(), l, r));
      }
      s.trees_.push_back(std::move(edges));
    }
    s.validate();
    return s;
  }

  //! D-vine along the given variable order.
  static VineStructure dvine(const std::vector<std::size_t>& order)
  {
    const std::size_t d = order.size();
    std::vector<std::pair<std::size_t, std::size_t>> t0;
    for (std::size_t i = 0; i + 1 < d; ++i) {
      t0.emplace_back(order[i], order[i + 1]);
    }
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> deeper;
    for (std::size_t t = 1; t + 1 < d; ++t) {
      std::vector<std::pair<std::size_t, std::size_t>> level;
      for (std::size_t i = 0; i + 1 < d - t; ++i) {
        level.emplace_back(i, i + 1);
      }
      deeper.push_back(level);
    }
    return from_pairs(d, t0, deeper);
  }

  std::size_t dim() const { return d_; }
  std::size_t num_trees() const { return trees_.size(); }
  const std::vector<VineEdge>& tree(std::size_t t) const { return trees_.at(t); }
  const std::vector<std::vector<VineEdge>>& trees() const { return trees_; }
  std::size_t num_edges() const
  {
    std::size_t n = 0;
    for (const auto& t : trees_) {
      n += t.size();
    }
    return n;
  }

  //! Checks edge counts, acyclicity and the proximity condition.
  void validate() const
  {
    if (d_ == 0) {
      throw std::invalid_argument("vine structure needs d >= 1");
    }
    if (trees_.size() != (d_ >= 2 ? d_ - 1 : 0)) {
      throw std::invalid_argument("vine structure must have d - 1 trees");
    }
    for (std::size_t t = 0; t < trees_.size(); ++t) {
      const auto& edges = trees_[t];
      if (edges.size() != d_ - 1 - t) {
        throw std::invalid_argument("tree " + std::to_string(t + 1) + " must have " +
                                    std::to_string(d_ - 1 - t) + " edges");
      }
      const std::size_t nodes = d_ - t;
      std::vector<std::size_t> parent(nodes);
      for (std::size_t i = 0; i < nodes; ++i) {
        parent[i] = i;
      }
      std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
        return parent[i] == i ? i : parent[i] = find(parent[i]);
      };
      for (const auto& e : edges) {
        std::size_t x, y;
        if (t == 0) {
          x = e.a;
          y = e.b;
          if (x >= d_ || y >= d_ || x == y || !e.conditioning.empty()) {
            throw std::invalid_argument("invalid first-tree edge");
          }
        } else {
          x = e.left;
          y = e.right;
          if (x >= nodes || y >= nodes || x == y) {
            throw std::invalid_argument("invalid parent reference in tree " +
                                        std::to_string(t + 1));
          }
          if (!share_node(t - 1, x, y)) {
            throw std::invalid_argument("proximity condition violated in tree " +
                                        std::to_string(t + 1));
          }
          const auto expect = join(trees_[t - 1], x, y);
          if (expect.a != e.a || expect.b != e.b || expect.conditioning != e.conditioning) {
            throw std::invalid_argument("inconsistent conditioning set in tree " +
                                        std::to_string(t + 1));
          }
        }
        const auto rx = find(x), ry = find(y);
        if (rx == ry) {
          throw std::invalid_argument("tree " + std::to_string(t + 1) + " contains a cycle");
        }
        parent[rx] = ry;
      }
    }
  }

  //! Whether edges i and j of tree t share a node of that tree.
  bool share_node(std::size_t t, std::size_t i, std::size_t j) const
  {
    const auto& ei = trees_[t][i];
    const auto& ej = trees_[t][j];
    if (t == 0) {
      return ei.a == ej.a || ei.a == ej.b || ei.b == ej.a || ei.b == ej.b;
    }
    return ei.left == ej.left || ei.left == ej.right || ei.right == ej.left ||
           ei.right == ej.right;
  }

  //! Edge of the next tree joining edges l and r of `level`.
  static VineEdge join(const std::vector<VineEdge>& level, std::size_t l, std::size_t r)
  {
    const auto sl = level.at(l).all_variables();
    const auto sr = level.at(r).all_variables();
    std::vector<std::size_t> common, only_l, only_r;
    std::set_intersection(sl.begin(), sl.end(), sr.begin(), sr.end(), std::back_inserter(common));
    std::set_difference(sl.begin(), sl.end(), sr.begin(), sr.end(), std::back_inserter(only_l));
    std::set_difference(sr.begin(), sr.end(), sl.begin(), sl.end(), std::back_inserter(only_r));
    if (only_l.size() != 1 || only_r.size() != 1) {
      throw std::invalid_argument("edges do not satisfy the proximity condition");
    }
    VineEdge e;
    e.a = only_l[0];
    e.b = only_r[0];
    e.conditioning = common;
    e.left = l;
    e.right = r;
    return e;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& level : trees_) {
      nlohmann::json edges = nlohmann::json::array();
      for (const auto& e : level) {
        nlohmann::json je{ { "a", e.a }, { "b", e.b }, { "conditioning", e.conditioning } };
        if (e.left != no_parent) {
          je["left"] = e.left;
          je["right"] = e.right;
        }
        edges.push_back(je);
      }
      trees.push_back(edges);
    }
    return { { "dim", d_ }, { "trees", trees } };
  }

  static VineStructure from_json(const nlohmann::json& j)
  {
    const auto d = j.at("dim").get<std::size_t>();
    const auto& trees = j.at("trees");
    std::vector<std::pair<std::size_t, std::size_t>> t0;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> deeper;
    for (std::size_t t = 0; t < trees.size(); ++t) {
      std::vector<std::pair<std::size_t, std::size_t>> level;
      for (const auto& e : trees[t]) {
        if (t == 0) {
          level.emplace_back(e.at("a").get<std::size_t>(), e.at("b").get<std::size_t>());
        } else {
          level.emplace_back(e.at("left").get<std::size_t>(), e.at("right").get<std::size_t>());
        }
      }
      if (t == 0) {
        t0 = level;
      } else {
        deeper.push_back(level);
      }
    }
    return from_pairs(d, t0, deeper);
  }

private:
  std::size_t d_{ 0 };
  std::vector<std::vector<VineEdge>> trees_;
};

//! Maximum spanning tree (Prim) over `nodes` vertices for the candidate
//! edges with weights. Ties resolve toward the earlier candidate.
inline std::vector<std::pair<std::size_t, std::size_t>>
maximum_spanning_tree(std::size_t nodes,
                      const std::vector<std::pair<std::size_t, std::size_t>>& candidates,
                      const std::vector<double>& weights)
{
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (nodes <= 1) {
    return out;
  }
  std::vector<bool> in(nodes, false);
  in[0] = true;
  for (std::size_t step = 0; step + 1 < nodes; ++step) {
    std::size_t best = candidates.size();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const auto [x, y] = candidates[c];
      if (in[x] == in[y]) {
        continue;
      }
      if (best == candidates.size() || weights[c] > weights[best]) {
        best = c;
      }
    }
    if (best == candidates.size()) {
      throw std::invalid_argument("candidate graph is not connected");
    }
    in[candidates[best].first] = true;
    in[candidates[best].second] = true;
    out.push_back(candidates[best]);
  }
  return out;
}

//! Conditional distribution value of `target` given `conditioner` with
//! its left limit; jumps below min_jump are treated as continuous.
inline PseudoObs
conditional_obs(const BivariateCopula& c, int direction, const PseudoObs& target,
                const PseudoObs& conditioner)
{
  const double u = hfunc(c, direction, target, conditioner);
  if (!target.discrete) {
    return PseudoObs::continuous(u);
  }
  const double ul =
    hfunc(c, direction, PseudoObs::continuous(target.u_left), conditioner);
  if (u - ul >= min_jump) {
    return PseudoObs::mixed(u, ul, true);
  }
  return PseudoObs::continuous(u);
}

struct VineFitOptions
{
  PairFitOptions pair;
  //! trees at or beyond this level (1-based count of fitted trees) use
  //! independence; 0 means untruncated
  std::size_t truncation_level = 0;
  BandwidthRule bandwidth = BandwidthRule::normal_reference;
  double atom_threshold = 0.01;
  //! fixed structure instead of Dissmann selection
  std::optional<VineStructure> structure;
};

//! Per-edge outputs: F(a | b, D) and F(b | a, D).
struct EdgeValues
{
  PseudoObs a;
  PseudoObs b;
};

//! Dependence part of a vine model: structure plus one pair copula per
//! edge. Operates on (u, u_left) pseudo-observations.
class VineCopula
{
public:
  VineCopula() = default;

  VineCopula(VineStructure structure, std::vector<std::vector<BivariateCopula>> pairs)
    : structure_(std::move(structure))
    , pairs_(std::move(pairs))
  {
    structure_.validate();
    if (pairs_.size() != structure_.num_trees()) {
      throw std::invalid_argument("one pair-copula list per tree required");
    }
    for (std::size_t t = 0; t < pairs_.size(); ++t) {
      if (pairs_[t].size() != structure_.tree(t).size()) {
        throw std::invalid_argument("one pair copula per edge required");
      }
    }
    compute_order();
  }

  static VineCopula independence(const VineStructure& s)
  {
    std::vector<std::vector<BivariateCopula>> pairs;
    for (const auto& level : s.trees()) {
      pairs.emplace_back(level.size(), BivariateCopula::independence());
    }
    return VineCopula(s, pairs);
  }

  std::size_t dim() const { return structure_.dim(); }
  const VineStructure& structure() const { return structure_; }
  const BivariateCopula& pair(std::size_t t, std::size_t e) const { return pairs_.at(t).at(e); }
  const std::vector<std::vector<BivariateCopula>>& pairs() const { return pairs_; }

  //! Rosenblatt order: variables in the sequence they are simulated.
  const std::vector<std::size_t>& order() const { return order_; }

  //! Edge indices (one per tree, tree 0 upward) in which variable j is
  //! conditioned on earlier variables of the order.
  const std::vector<std::size_t>& leaf_edges(std::size_t j) const { return leaf_edges_.at(j); }

  //! Evaluates all edge outputs for one observation.
  std::vector<std::vector<EdgeValues>> propagate(std::span<const PseudoObs> u) const
  {
    std::vector<std::vector<EdgeValues>> out(structure_.num_trees());
    for (std::size_t t = 0; t < structure_.num_trees(); ++t) {
      out[t].resize(structure_.tree(t).size());
      for (std::size_t e = 0; e < out[t].size(); ++e) {
        out[t][e] = edge_values(t, e, u, out);
      }
    }
    return out;
  }

  //! Log of the generalized copula density (sum over edges of log c).
  double log_density(std::span<const PseudoObs> u) const
  {
    check_dim(u.size());
    double ll = 0.0;
    std::vector<std::vector<EdgeValues>> out(structure_.num_trees());
    for (std::size_t t = 0; t < structure_.num_trees(); ++t) {
      out[t].resize(structure_.tree(t).size());
      for (std::size_t e = 0; e < out[t].size(); ++e) {
        const auto [ia, ib] = inputs(t, e, u, out);
        const double c = gen_density(pairs_[t][e], ia, ib);
        if (!(c > 0.0)) {
          return -std::numeric_limits<double>::infinity();
        }
        ll += std::log(c);
        out[t][e] = edge_values(t, e, u, out);
      }
    }
    return ll;
  }

  //! Conditional distribution values F(x_j | earlier variables) with left
  //! limits, indexed by variable.
  std::vector<PseudoObs> conditionals(std::span<const PseudoObs> u) const
  {
    check_dim(u.size());
    const auto out = propagate(u);
    std::vector<PseudoObs> res(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      const auto& leaves = leaf_edges_[j];
      if (leaves.empty()) {
        res[j] = u[j];
      } else {
        const std::size_t t = leaves.size() - 1;
        const auto& edge = structure_.tree(t)[leaves[t]];
        res[j] = edge.a == j ? out[t][leaves[t]].a : out[t][leaves[t]].b;
      }
    }
    return res;
  }

  //! Randomized forward Rosenblatt transform; noise indexed by variable.
  std::vector<double> forward(std::span<const PseudoObs> u, std::span<const double> noise) const
  {
    if (noise.size() != dim()) {
      throw std::invalid_argument("noise must have one entry per variable");
    }
    const auto c = conditionals(u);
    std::vector<double> v(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      v[j] = c[j].jitter(std::clamp(noise[j], 0.0, 1.0));
    }
    return v;
  }

  //! Inverse Rosenblatt transform. `realize(j, u)` maps the marginal
  //! uniform of variable j to its pseudo-observation (for instance via a
  //! marginal quantile); it is called in Rosenblatt order.
  std::vector<PseudoObs> inverse(
    std::span<const double> v,
    const std::function<PseudoObs(std::size_t, double)>& realize,
    double tol = 1e-12) const
  {
    check_dim(v.size());
    std::vector<PseudoObs> u(dim());
    std::vector<std::vector<EdgeValues>> out(structure_.num_trees());
    for (std::size_t t = 0; t < structure_.num_trees(); ++t) {
      out[t].resize(structure_.tree(t).size());
    }
    for (const std::size_t j : order_) {
      const auto& leaves = leaf_edges_[j];
      double w = v[j];
      for (std::size_t k = leaves.size(); k-- > 0;) {
        const auto& edge = structure_.tree(k)[leaves[k]];
        const auto [ia, ib] = inputs(k, leaves[k], u, out);
        const bool is_a = edge.a == j;
        try {
          w = hfunc_inverse(pairs_[k][leaves[k]], is_a ? 1 : 2, w, is_a ? ib : ia, tol);
        } catch (const DomainError& err) {
          throw DomainError("inverse Rosenblatt failed at tree " + std::to_string(k + 1) +
                            ", edge " + std::to_string(leaves[k]) + ": " + err.what());
        }
      }
      u[j] = realize(j, w);
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        out[k][leaves[k]] = edge_values(k, leaves[k], u, out);
      }
    }
    return u;
  }

  //! Inverse Rosenblatt on the uniform scale (continuous realization).
  std::vector<double> inverse_uniform(std::span<const double> v, double tol = 1e-12) const
  {
    const auto u =
      inverse(v, [](std::size_t, double w) { return PseudoObs::continuous(w); }, tol);
    std::vector<double> res(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
      res[j] = u[j].u;
    }
    return res;
  }

  //! Draws n samples on the uniform scale.
  Eigen::MatrixXd simulate_uniform(std::size_t n, std::uint64_t seed) const
  {
    Rng rng(seed);
    Eigen::MatrixXd out(n, dim());
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& x : v) {
        x = rng.uniform_open();
      }
      const auto u = inverse_uniform(v);
      for (std::size_t j = 0; j < dim(); ++j) {
        out(i, j) = u[j];
      }
    }
    return out;
  }

  //! Dissmann-type sequential selection and fit on pseudo-observations
  //! (rows are observations, columns variables).
  static VineCopula select(const std::vector<std::vector<PseudoObs>>& data, std::size_t d,
                           const VineFitOptions& options, std::uint64_t seed);

  nlohmann::json to_json() const
  {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& level : pairs_) {
      nlohmann::json lj = nlohmann::json::array();
      for (const auto& c : level) {
        lj.push_back(c.to_json());
      }
      pairs.push_back(lj);
    }
    return { { "structure", structure_.to_json() }, { "pair_copulas", pairs } };
  }

  static VineCopula from_json(const nlohmann::json& j)
  {
    auto s = VineStructure::from_json(j.at("structure"));
    std::vector<std::vector<BivariateCopula>> pairs;
    for (const auto& level : j.at("pair_copulas")) {
      std::vector<BivariateCopula> lv;
      for (const auto& c : level) {
        lv.push_back(BivariateCopula::from_json(c));
      }
      pairs.push_back(std::move(lv));
    }
    return VineCopula(std::move(s), std::move(pairs));
  }

private:
  VineStructure structure_;
  std::vector<std::vector<BivariateCopula>> pairs_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<std::size_t>> leaf_edges_;

  void check_dim(std::size_t n) const
  {
    if (n != dim()) {
      throw std::invalid_argument("expected " + std::to_string(dim()) + " coordinates, got " +
                                  std::to_string(n));
    }
  }

  // inputs F(a | D), F(b | D) of edge e in tree t
  std::pair<PseudoObs, PseudoObs> inputs(std::size_t t, std::size_t e,
                                         std::span<const PseudoObs> u,
                                         const std::vector<std::vector<EdgeValues>>& out) const
  {
    const auto& edge = structure_.tree(t)[e];
    if (t == 0) {
      return { u[edge.a], u[edge.b] };
    }
    const auto& prev = structure_.tree(t - 1);
    const auto& l = prev[edge.left];
    const auto& r = prev[edge.right];
    const auto& ol = out[t - 1][edge.left];
    const auto& orr = out[t - 1][edge.right];
    return { l.a == edge.a ? ol.a : ol.b, r.a == edge.b ? orr.a : orr.b };
  }

  EdgeValues edge_values(std::size_t t, std::size_t e, std::span<const PseudoObs> u,
                         const std::vector<std::vector<EdgeValues>>& out) const
  {
    const auto [ia, ib] = inputs(t, e, u, out);
    const auto& c = pairs_[t][e];
    return { conditional_obs(c, 1, ia, ib), conditional_obs(c, 2, ib, ia) };
  }

  // peel variables off the last tree to obtain the simulation order
  void compute_order()
  {
    const std::size_t d = dim();
    order_.assign(d, 0);
    leaf_edges_.assign(d, {});
    std::vector<std::vector<bool>> removed;
    for (const auto& level : structure_.trees()) {
      removed.emplace_back(level.size(), false);
    }
    std::vector<bool> done(d, false);
    for (std::size_t k = d; k-- > 1;) {
      // remaining top tree has exactly one edge
      const std::size_t top = k - 1;
      std::size_t var = d;
      for (std::size_t e = 0; e < structure_.tree(top).size(); ++e) {
        if (!removed[top][e]) {
          var = structure_.tree(top)[e].a;
          break;
        }
      }
      std::vector<std::size_t> leaves(k);
      for (std::size_t t = 0; t < k; ++t) {
        std::size_t found = no_parent;
        for (std::size_t e = 0; e < structure_.tree(t).size(); ++e) {
          if (!removed[t][e] && structure_.tree(t)[e].conditions_on(var)) {
            if (found != no_parent) {
              throw std::logic_error("variable is not a leaf of the remaining vine");
            }
            found = e;
          }
        }
        if (found == no_parent) {
          throw std::logic_error("vine order: missing leaf edge");
        }
        leaves[t] = found;
        removed[t][found] = true;
      }
      order_[k] = var;
      leaf_edges_[var] = std::move(leaves);
      done[var] = true;
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (!done[j]) {
        order_[0] = j;
      }
    }
  }
};

inline VineCopula
VineCopula::select(const std::vector<std::vector<PseudoObs>>& data, std::size_t d,
                   const VineFitOptions& options, std::uint64_t seed)
{
  const std::size_t n = data.size();
  if (d < 1) {
    throw std::invalid_argument("vine needs at least one variable");
  }
  if (n < 30) {
    throw EstimationError("vine fit needs at least 30 observations, got " + std::to_string(n));
  }
  // current level's node values: nodes are variables (tree 0) or edges
  // of the previous tree; each node exposes a column per variable side
  struct Column
  {
    std::vector<PseudoObs> obs;
    std::vector<double> jittered;
  };
  auto jitter_column = [&](std::vector<PseudoObs> obs, std::uint64_t s) {
    Column c;
    Rng rng(s);
    c.jittered.resize(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      c.jittered[i] = obs[i].jitter(rng.uniform());
    }
    c.obs = std::move(obs);
    return c;
  };

  std::vector<Column> vars(d);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<PseudoObs> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = data[i][j];
    }
    vars[j] = jitter_column(std::move(col), combine_seed(seed, 1000 + j));
  }

  auto abs_tau = [](const Column& x, const Column& y) {
    return std::fabs(stats::kendall_tau_b(x.jittered, y.jittered));
  };

  auto fit_edge = [&](std::size_t t, const Column& x, const Column& y) {
    if (options.truncation_level > 0 && t >= options.truncation_level) {
      return BivariateCopula::independence();
    }
    return fit_pair_continuous(x.jittered, y.jittered, options.pair);
  };

  std::vector<std::pair<std::size_t, std::size_t>> first;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> deeper;
  std::vector<std::vector<BivariateCopula>> pairs;
  std::vector<VineEdge> level_edges;
  // per-edge outputs of the current level: side a and side b
  std::vector<std::pair<Column, Column>> level_out;

  const bool fixed = options.structure.has_value();
  if (fixed && options.structure->dim() != d) {
    throw std::invalid_argument("fixed structure dimension mismatch");
  }

  for (std::size_t t = 0; t + 1 < d; ++t) {
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    if (fixed) {
      for (const auto& e : options.structure->tree(t)) {
        chosen.emplace_back(t == 0 ? e.a : e.left, t == 0 ? e.b : e.right);
      }
    } else {
      std::vector<std::pair<std::size_t, std::size_t>> cand;
      std::vector<double> w;
      if (t == 0) {
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = a + 1; b < d; ++b) {
            cand.emplace_back(a, b);
            w.push_back(abs_tau(vars[a], vars[b]));
          }
        }
      } else {
        for (std::size_t l = 0; l < level_edges.size(); ++l) {
          for (std::size_t r = l + 1; r < level_edges.size(); ++r) {
            VineEdge e;
            try {
              e = VineStructure::join(level_edges, l, r);
            } catch (const std::invalid_argument&) {
              continue;
            }
            // proximity: the two edges share a node of the previous tree
            const auto& el = level_edges[l];
            const auto& er = level_edges[r];
            const bool share = t == 1 ? (el.a == er.a || el.a == er.b || el.b == er.a ||
                                         el.b == er.b)
                                      : (el.left == er.left || el.left == er.right ||
                                         el.right == er.left || el.right == er.right);
            if (!share) {
              continue;
            }
            const auto& ca = el.a == e.a ? level_out[l].first : level_out[l].second;
            const auto& cb = er.a == e.b ? level_out[r].first : level_out[r].second;
            cand.emplace_back(l, r);
            w.push_back(abs_tau(ca, cb));
          }
        }
      }
      const std::size_t nodes = t == 0 ? d : level_edges.size();
      chosen = maximum_spanning_tree(nodes, cand, w);
      for (auto& [x, y] : chosen) {
        if (x > y) {
          std::swap(x, y);
        }
      }
      std::sort(chosen.begin(), chosen.end());
    }

    std::vector<VineEdge> next_edges;
    std::vector<std::pair<Column, Column>> next_out;
    std::vector<BivariateCopula> level_pairs;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const auto [x, y] = chosen[k];
      VineEdge e;
      const Column* ca;
      const Column* cb;
      if (t == 0) {
        e.a = std::min(x, y);
        e.b = std::max(x, y);
        ca = &vars[e.a];
        cb = &vars[e.b];
      } else {
        e = VineStructure::join(level_edges, x, y);
        const auto& el = level_edges[x];
        const auto& er = level_edges[y];
        ca = el.a == e.a ? &level_out[x].first : &level_out[x].second;
        cb = er.a == e.b ? &level_out[y].first : &level_out[y].second;
      }
      const auto c = fit_edge(t, *ca, *cb);
      std::vector<PseudoObs> oa(n), ob(n);
      if (t + 2 < d) {
        for (std::size_t i = 0; i < n; ++i) {
          oa[i] = conditional_obs(c, 1, ca->obs[i], cb->obs[i]);
          ob[i] = conditional_obs(c, 2, cb->obs[i], ca->obs[i]);
        }
      }
      const std::uint64_t es = combine_seed(seed, 10000 * (t + 1) + 2 * k);
      next_out.emplace_back(jitter_column(std::move(oa), es),
                            jitter_column(std::move(ob), combine_seed(es, 1)));
      next_edges.push_back(e);
      level_pairs.push_back(c);
    }
    if (t == 0) {
      first = chosen;
    } else {
      deeper.push_back(chosen);
    }
    pairs.push_back(std::move(level_pairs));
    level_edges = std::move(next_edges);
    level_out = std::move(next_out);
  }
  auto structure = VineStructure::from_pairs(d, first, deeper);
  return VineCopula(std::move(structure), std::move(pairs));
}

//! Full vine model: mixture margins plus the vine copula.
class VineModel
{
public:
  static constexpr int format_version = 1;

  VineModel() = default;
  VineModel(std::vector<MixtureMarginal> margins, VineCopula copula,
            std::vector<std::string> names = {})
    : margins_(std::move(margins))
    , copula_(std::move(copula))
    , names_(std::move(names))
  {
    if (margins_.size() != copula_.dim()) {
      throw std::invalid_argument("one margin per vine variable required");
    }
    if (names_.empty()) {
      for (std::size_t j = 0; j < margins_.size(); ++j) {
        names_.push_back("x" + std::to_string(j + 1));
      }
    }
  }

  //! Fits margins, selects the structure and fits all pair copulas.
  static VineModel fit(const Eigen::MatrixXd& data, const std::vector<SupportKind>& kinds,
                       const VineFitOptions& options = {}, std::uint64_t seed = 0,
                       std::vector<std::string> names = {})
  {
    const auto n = static_cast<std::size_t>(data.rows());
    const auto d = static_cast<std::size_t>(data.cols());
    if (kinds.size() != d) {
      throw SchemaError("expected one support kind per column");
    }
    if (!names.empty() && names.size() != d) {
      throw SchemaError("expected one name per column");
    }
    auto label = [&](std::size_t j) {
      return names.empty() ? "x" + std::to_string(j + 1) : names[j];
    };
    std::vector<MixtureMarginal> margins;
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) {
        col[i] = data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
      try {
        margins.push_back(
          MixtureMarginal::fit(col, kinds[j], options.bandwidth, options.atom_threshold));
      } catch (const EstimationError& e) {
        throw EstimationError("variable '" + label(j) + "': " + e.what());
      }
      if (margins.back().degenerate()) {
        throw EstimationError("variable '" + label(j) +
                              "' has no continuous part (all values atomic)");
      }
    }
    VineModel proto(margins, VineCopula::independence(options.structure.value_or(
                               VineStructure::dvine(identity_order(d)))),
                    names);
    std::vector<std::vector<PseudoObs>> pseudo(n);
    for (std::size_t i = 0; i < n; ++i) {
      pseudo[i] = proto.pseudo_obs(row(data, i));
    }
    auto copula = VineCopula::select(pseudo, d, options, seed);
    return VineModel(std::move(margins), std::move(copula), std::move(names));
  }

  std::size_t dim() const { return margins_.size(); }
  const std::vector<MixtureMarginal>& margins() const { return margins_; }
  const MixtureMarginal& margin(std::size_t j) const { return margins_.at(j); }
  const VineCopula& copula() const { return copula_; }
  const VineStructure& structure() const { return copula_.structure(); }
  const std::vector<std::string>& names() const { return names_; }

  std::vector<PseudoObs> pseudo_obs(std::span<const double> x) const
  {
    check_dim(x.size());
    std::vector<PseudoObs> u(dim());
    for (std::size_t j = 0; j < dim(); ++j) {
      u[j] = margin_obs(j, x[j]);
    }
    return u;
  }

  //! Log density with respect to the mixed dominating measure.
  double log_density(std::span<const double> x) const
  {
    check_dim(x.size());
    double ll = 0.0;
    for (std::size_t j = 0; j < dim(); ++j) {
      const double f = margins_[j].density(x[j]);
      if (!(f > 0.0)) {
        return -std::numeric_limits<double>::infinity();
      }
      ll += std::log(f);
    }
    return ll + copula_.log_density(pseudo_obs(x));
  }

  std::vector<double> rosenblatt_forward(std::span<const double> x,
                                         std::span<const double> noise) const
  {
    return copula_.forward(pseudo_obs(x), noise);
  }

  std::vector<double> rosenblatt_inverse(std::span<const double> v, double tol = 1e-12) const
  {
    check_dim(v.size());
    std::vector<double> x(dim());
    copula_.inverse(
      v,
      [&](std::size_t j, double w) {
        x[j] = margins_[j].quantile(std::clamp(w, 0.0, 1.0));
        return margin_obs(j, x[j]);
      },
      tol);
    return x;
  }

  Eigen::MatrixXd sample(std::size_t n, std::uint64_t seed) const
  {
    Rng rng(seed);
    Eigen::MatrixXd out(n, dim());
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& x : v) {
        x = rng.uniform_open();
      }
      const auto x = rosenblatt_inverse(v);
      for (std::size_t j = 0; j < dim(); ++j) {
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[j];
      }
    }
    return out;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json margins = nlohmann::json::array();
    for (const auto& m : margins_) {
      margins.push_back(m.to_json());
    }
    auto j = copula_.to_json();
    j["version"] = format_version;
    j["variables"] = names_;
    j["margins"] = margins;
    j["order"] = copula_.order();
    return j;
  }

  static VineModel from_json(const nlohmann::json& j)
  {
    if (j.value("version", 0) != format_version) {
      throw SchemaError("unsupported model file version");
    }
    std::vector<MixtureMarginal> margins;
    for (const auto& m : j.at("margins")) {
      margins.push_back(MixtureMarginal::from_json(m));
    }
    return VineModel(std::move(margins), VineCopula::from_json(j),
                     j.at("variables").get<std::vector<std::string>>());
  }

  static std::vector<double> row(const Eigen::MatrixXd& m, std::size_t i)
  {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    return r;
  }

private:
  std::vector<MixtureMarginal> margins_;
  VineCopula copula_;
  std::vector<std::string> names_;

  static std::vector<std::size_t> identity_order(std::size_t d)
  {
    std::vector<std::size_t> o(d);
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = j;
    }
    return o;
  }

  PseudoObs margin_obs(std::size_t j, double x) const
  {
    const auto e = margins_[j].eval(x);
    const bool discrete = e.cdf - e.cdf_left >= min_jump;
    return discrete ? PseudoObs::mixed(e.cdf, e.cdf_left, true) : PseudoObs::continuous(e.cdf);
  }

  void check_dim(std::size_t n) const
  {
    if (n != dim()) {
      throw std::invalid_argument("expected " + std::to_string(dim()) + " coordinates, got " +
                                  std::to_string(n));
    }
  }
};

} // namespace vbc
