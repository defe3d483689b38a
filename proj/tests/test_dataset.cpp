#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <string>

#include "vbc/dataset.hpp"
#include "vbc/synthetic.hpp"

using namespace vbc;

namespace {

std::vector<Variable>
schema()
{
  std::vector<Variable> v;
  const auto names = synthetic::names();
  const auto kinds = synthetic::kinds();
  for (std::size_t j = 0; j < names.size(); ++j) {
    v.push_back({ names[j], kinds[j], "" });
  }
  return v;
}

std::string
ten_row_csv()
{
  std::string s = "timestamp,member,d,p,r,w,t\n";
  const Timestamp start{ 2019, 12, 1, 0, 0, 0 };
  for (int i = 0; i < 10; ++i) {
    s += start.plus_hours(3 * i).str() + ",1,1.5,0,12.5,3.1,-2\n";
  }
  return s;
}

// days since 1970-01-01 of a civil date (proleptic Gregorian)
long
days_from_civil(long y, unsigned m, unsigned d)
{
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

long
hours_since_epoch(const Timestamp& t)
{
  return days_from_civil(t.year, static_cast<unsigned>(t.month), static_cast<unsigned>(t.day)) *
           24 +
         t.hour;
}

} // namespace

TEST(Timestamp, ParsesIsoVariants)
{
  const auto a = Timestamp::parse("2019-12-15T03:00");
  EXPECT_EQ(a, (Timestamp{ 2019, 12, 15, 3, 0, 0 }));
  EXPECT_EQ(Timestamp::parse("2019-12-15 03:00:00Z"), a);
  EXPECT_EQ(Timestamp::parse("2019-12-15"), (Timestamp{ 2019, 12, 15, 0, 0, 0 }));
  EXPECT_EQ(a.str(), "2019-12-15T03:00:00");
  for (const char* bad : { "2019-02-30T00:00", "2019-13-01", "2019-1-01", "2019-01-01T24:00",
                           "2019/01/01", "", "2019-01-01T03:00:0" }) {
    EXPECT_THROW(Timestamp::parse(bad), std::invalid_argument) << bad;
  }
  EXPECT_NO_THROW(Timestamp::parse("2020-02-29"));
  EXPECT_THROW(Timestamp::parse("2100-02-29"), std::invalid_argument);
}

TEST(Timestamp, HourArithmeticMatchesCivilCalendar)
{
  const Timestamp start{ 1999, 12, 31, 21, 0, 0 };
  for (long h : { 0L, 3L, 27L, 24L * 60, 24L * 366 + 6, -3L, -24L * 400 - 9, 100000L }) {
    const auto t = start.plus_hours(h);
    EXPECT_EQ(hours_since_epoch(t) - hours_since_epoch(start), h) << t.str();
    EXPECT_NO_THROW(Timestamp::parse(t.str()));
  }
}

TEST(LoadTable, ParsesRows)
{
  std::istringstream in(ten_row_csv());
  const auto t = read_table(in, schema());
  EXPECT_EQ(t.rows(), 10u);
  EXPECT_EQ(t.dim(), 5u);
  EXPECT_EQ(t.values()(9, 4), -2.0);
  EXPECT_EQ(t.timestamp(9), (Timestamp{ 2019, 12, 2, 3, 0, 0 }));
}

TEST(LoadTable, ColumnOrderIsFree)
{
  std::istringstream in("t,member,extra,w,timestamp,r,p,d\n-1,2,x,4,2019-01-01T00:00,5,6,7\n");
  const auto t = read_table(in, schema());
  EXPECT_EQ(t.values()(0, 0), 7.0);
  EXPECT_EQ(t.values()(0, 4), -1.0);
  EXPECT_EQ(t.member(0), 2);
}

TEST(LoadTable, MissingColumnNamesIt)
{
  std::istringstream in("timestamp,member,d,p,w,t\n");
  try {
    read_table(in, schema());
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("'r'"), std::string::npos);
  }
}

TEST(LoadTable, BadCellCitesRow)
{
  auto csv = ten_row_csv();
  std::size_t pos = 0;
  for (int k = 0; k < 7; ++k) {
    pos = csv.find('\n', pos) + 1;
  }
  // seventh data row: replace its radiation value
  csv.replace(csv.find("12.5", pos), 4, "abc");
  std::istringstream in(csv);
  try {
    read_table(in, schema());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 7u);
    EXPECT_NE(std::string(e.what()).find("row 7"), std::string::npos);
  }
}

TEST(LoadTable, RejectsDisorderAndNegatives)
{
  std::istringstream disorder("timestamp,member,d,p,r,w,t\n"
                              "2019-01-01T03:00,1,0,0,0,1,0\n"
                              "2019-01-01T06:00,2,0,0,0,1,0\n"
                              "2019-01-01T03:00,1,0,0,0,1,0\n");
  EXPECT_THROW(read_table(disorder, schema()), OrderingError);
  std::istringstream negative("timestamp,member,d,p,r,w,t\n2019-01-01T03:00,1,-4,-0.5,0,1,0\n");
  EXPECT_THROW(read_table(negative, schema()), ParseError);
  std::istringstream member("timestamp,member,d,p,r,w,t\n2019-01-01T03:00,1.5,0,0,0,1,0\n");
  EXPECT_THROW(read_table(member, schema()), ParseError);
  std::istringstream ragged("timestamp,member,d,p,r,w,t\n2019-01-01T03:00,1,0,0,0,1\n");
  EXPECT_THROW(read_table(ragged, schema()), ParseError);
}

TEST(LoadTable, WriteReadRoundTripIsExact)
{
  const auto t = synthetic_table(SyntheticSpec::biased(), { 1, 2 }, 50, 3);
  std::ostringstream out;
  write_table(out, t);
  std::istringstream in(out.str());
  const auto back = read_table(in, t.variables());
  EXPECT_TRUE((back.values().array() == t.values().array()).all());
  EXPECT_EQ(back.timestamps(), t.timestamps());
  EXPECT_EQ(back.members(), t.members());
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Chunks, KeyExamples)
{
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-12-15T03:00")).str(), "DJF-night");
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-07-01T12:00")).str(), "JJA-day");
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-03-01T06:00")).str(), "MAM-day");
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-11-30T18:00")).str(), "SON-night");
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-02-28T05:59")).str(), "DJF-night");
  EXPECT_EQ(chunk_key_of(Timestamp::parse("2019-09-01T17:59")).str(), "SON-day");
  std::set<std::string> names;
  for (const auto& k : ChunkKey::all()) {
    names.insert(k.str());
    EXPECT_EQ(ChunkKey::parse(k.str()), k);
    EXPECT_EQ(ChunkKey::all()[k.index()], k);
  }
  EXPECT_EQ(names.size(), 8u);
}

TEST(Chunks, PartitionCoversTableOnce)
{
  const auto t = synthetic_table(SyntheticSpec::reference(), { 1, 2, 3 }, 8 * 400, 4,
                                 Timestamp{ 2003, 10, 17, 0, 0, 0 });
  const auto chunks = make_chunks(t);
  ASSERT_EQ(chunks.size(), 8u);
  std::vector<int> seen(t.rows(), 0);
  for (const auto& c : chunks) {
    EXPECT_EQ(c.core_rows, c.estimation_rows);
    for (auto i : c.core_rows) {
      ++seen[i];
      EXPECT_EQ(chunk_key_of(t.timestamp(i)), c.key);
    }
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST(Overlap, IdentityAtZeroFraction)
{
  const auto t = synthetic_table(SyntheticSpec::reference(), { 1 }, 8 * 200, 5);
  const auto c = make_chunks(t)[0];
  EXPECT_EQ(extend_overlap(c, t, 0.0, 1).estimation_rows, c.core_rows);
  EXPECT_THROW(extend_overlap(c, t, 1.5, 1), std::invalid_argument);
}

TEST(Overlap, FourThousandCoreRowsGiveFiveThousand)
{
  const auto t = synthetic_table(SyntheticSpec::reference(), { 7 }, 8 * 365 * 12, 6);
  auto c = make_chunks(t)[ChunkKey::parse("DJF-night").index()];
  ASSERT_GE(c.core_rows.size(), 4000u);
  c.core_rows.resize(4000);
  c.estimation_rows = c.core_rows;
  const auto e = extend_overlap(c, t, 0.25, 8);
  EXPECT_EQ(e.core_rows, c.core_rows);
  EXPECT_EQ(e.estimation_rows.size(), 5000u);
  EXPECT_TRUE(std::includes(e.estimation_rows.begin(), e.estimation_rows.end(),
                            c.core_rows.begin(), c.core_rows.end()));
}

TEST(Overlap, DrawsPerMemberFromAdjacentRegion)
{
  const auto t = synthetic_table(SyntheticSpec::reference(), { 1, 2, 3 }, 8 * 730, 9);
  for (const auto& c : make_chunks(t)) {
    const auto e = extend_overlap(c, t, 0.25, 10);
    const std::set<std::size_t> core(c.core_rows.begin(), c.core_rows.end());
    EXPECT_TRUE(std::is_sorted(e.estimation_rows.begin(), e.estimation_rows.end()));
    EXPECT_EQ(std::set<std::size_t>(e.estimation_rows.begin(), e.estimation_rows.end()).size(),
              e.estimation_rows.size());
    for (auto m : t.member_ids()) {
      const auto n_core = t.of_member(c.core_rows, m).size();
      const auto n_est = t.of_member(e.estimation_rows, m).size();
      EXPECT_EQ(n_est - n_core, static_cast<std::size_t>(std::llround(0.25 * n_core)));
    }
    for (auto i : e.estimation_rows) {
      if (core.count(i)) {
        continue;
      }
      const auto& ts = t.timestamp(i);
      const auto k = chunk_key_of(ts);
      EXPECT_NE(k, c.key);
      EXPECT_TRUE(in_overlap_region(c.key, ts)) << ts.str();
    }
    EXPECT_EQ(extend_overlap(c, t, 0.25, 10).estimation_rows, e.estimation_rows);
    EXPECT_NE(extend_overlap(c, t, 0.25, 11).estimation_rows, e.estimation_rows);
  }
}

TEST(Overlap, RegionDefinition)
{
  const auto djf_night = ChunkKey::parse("DJF-night");
  EXPECT_TRUE(in_overlap_region(djf_night, Timestamp::parse("2019-11-20T21:00")));
  EXPECT_TRUE(in_overlap_region(djf_night, Timestamp::parse("2019-03-05T15:00")));
  EXPECT_TRUE(in_overlap_region(djf_night, Timestamp::parse("2019-01-05T06:00")));
  EXPECT_FALSE(in_overlap_region(djf_night, Timestamp::parse("2019-01-05T12:00")));
  EXPECT_FALSE(in_overlap_region(djf_night, Timestamp::parse("2019-04-05T00:00")));
  EXPECT_FALSE(in_overlap_region(djf_night, Timestamp::parse("2019-10-05T00:00")));
  const auto mam_day = ChunkKey::parse("MAM-day");
  EXPECT_TRUE(in_overlap_region(mam_day, Timestamp::parse("2019-02-10T03:00")));
  EXPECT_TRUE(in_overlap_region(mam_day, Timestamp::parse("2019-06-10T18:00")));
  EXPECT_FALSE(in_overlap_region(mam_day, Timestamp::parse("2019-06-10T21:00")));
}

TEST(Overlap, SmallPoolWarnsAndTakesAll)
{
  // only winter data: the pool of a winter chunk is just its bordering slots
  const auto t = synthetic_table(SyntheticSpec::reference(), { 1 }, 8 * 30, 12,
                                 Timestamp{ 2010, 1, 1, 0, 0, 0 });
  const auto c = make_chunks(t)[ChunkKey::parse("DJF-night").index()];
  std::vector<std::string> warnings;
  const auto e = extend_overlap(c, t, 1.0, 13, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  std::size_t pool = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    pool += in_overlap_region(c.key, t.timestamp(i)) && chunk_key_of(t.timestamp(i)) != c.key;
  }
  EXPECT_EQ(e.estimation_rows.size(), c.core_rows.size() + pool);
}

TEST(Chunks, ManifestListsRows)
{
  const auto t = synthetic_table(SyntheticSpec::reference(), { 1, 2 }, 8 * 100, 14);
  std::vector<Chunk> chunks;
  for (const auto& c : make_chunks(t)) {
    chunks.push_back(extend_overlap(c, t, 0.25, 15));
  }
  const auto j = chunk_manifest(chunks, 0.25, 15);
  ASSERT_EQ(j["chunks"].size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(j["chunks"][k]["key"], chunks[k].key.str());
    EXPECT_EQ(j["chunks"][k]["core_rows"].size() + j["chunks"][k]["overlap_rows"].size(),
              chunks[k].estimation_rows.size());
  }
}
