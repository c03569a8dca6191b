#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ctf/error.hpp"
#include "ctf/io.hpp"

using namespace ctf;
using namespace ctf::io;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ctf_io_" + name);
  fs::remove_all(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

const char* kManifest = R"({
  "name": "tiny",
  "synthetic": {"n_channels": 2, "base_len": 400, "seed": 4},
  "channels": [
    {"name": "a", "column": "ch0", "sampling_factor": 1},
    {"name": "b", "column": "ch1", "sampling_factor": 4}
  ]
})";

}  // namespace

TEST(DenseCsv, RoundTripWithMissingCells) {
  data::DenseSeries s;
  s.steps = 3;
  s.names = {"x", "y"};
  s.columns = {{0.1, std::nan(""), 1e-300}, {-2.5, 3.0, 4.0}};
  auto back = dense_from_csv(dense_to_csv(s));
  EXPECT_EQ(back.names, s.names);
  EXPECT_EQ(back.columns[0][0], 0.1);
  EXPECT_TRUE(std::isnan(back.columns[0][1]));
  EXPECT_EQ(back.columns[0][2], 1e-300);
  EXPECT_EQ(back.columns[1], s.columns[1]);
}

TEST(DenseCsv, BadCellReportsLine) {
  const std::string text = "step,a\n0,1\n1,oops\n";
  EXPECT_NE(error_of([&] { dense_from_csv(text, "f.csv"); }).find("f.csv:3"), std::string::npos);
}

TEST(DenseCsv, WrongCellCountReportsLine) {
  const std::string text = "step,a,b\n0,1,2\n1,3\n";
  auto msg = error_of([&] { dense_from_csv(text, "f.csv"); });
  EXPECT_NE(msg.find("f.csv:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected 3 cells"), std::string::npos) << msg;
}

TEST(Manifest, ParsesSyntheticAndDefaults) {
  auto m = parse_manifest(kManifest);
  EXPECT_EQ(m.name, "tiny");
  ASSERT_TRUE(m.synthetic);
  EXPECT_EQ(m.synthetic->base_len, 400u);
  EXPECT_EQ(m.synthetic->coupling, 0.8);
  EXPECT_EQ(m.splits.train, 0.7);
  EXPECT_EQ(m.channels[1].sampling_factor, 4u);
}

TEST(Manifest, UnknownFieldNamesItsPath) {
  std::string text = kManifest;
  text.replace(text.find("\"sampling_factor\": 4"), 20, "\"sampling_factr\": 4");
  auto msg = error_of([&] { parse_manifest(text); });
  EXPECT_NE(msg.find("manifest.channels[1]"), std::string::npos) << msg;
}

TEST(Manifest, MalformedJsonReportsLineAndColumn) {
  auto msg = error_of([] { parse_manifest("{\n  \"name\": ,\n}"); });
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
}

TEST(Manifest, RequiresExactlyOneSource) {
  EXPECT_THROW(parse_manifest(R"({"name":"x","channels":[{"name":"a","column":"a","sampling_factor":1}]})"),
               ConfigError);
}

TEST(Manifest, RequiresAUnitFactor) {
  std::string text = kManifest;
  text.replace(text.find("\"sampling_factor\": 1"), 20, "\"sampling_factor\": 2");
  EXPECT_THROW(parse_manifest(text), ConfigError);
}

TEST(Manifest, CsvSourceResolvesAgainstManifestDir) {
  auto dir = scratch("csvsrc");
  fs::create_directories(dir);
  write_file(dir / "d.csv", "step,u,v\n0,1,10\n1,2,\n2,3,12\n3,4,13\n");
  write_file(dir / "m.json", R"({"name":"c","csv":"d.csv","channels":[
      {"name":"u","column":"u","sampling_factor":1},{"name":"v","column":"v","sampling_factor":2}],
      "splits":{"train":0.5,"val":0.25,"test":0.25}})");
  auto ds = build_dataset(load_manifest(dir / "m.json"));
  EXPECT_EQ(ds.values[0], (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(ds.values[1], (std::vector<double>{10, 12}));
  auto missing = parse_manifest(R"({"name":"c","csv":"d.csv","channels":[
      {"name":"u","column":"nope","sampling_factor":1}]})", dir);
  EXPECT_THROW(build_dataset(missing), ConfigError);
  fs::remove_all(dir);
}

TEST(Prepared, RoundTripPreservesDataset) {
  auto m = parse_manifest(kManifest);
  auto ds = build_dataset(m);
  auto dir = scratch("prepared");
  write_prepared(dir, ds, m);
  auto back = load_prepared(dir);
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.observed, ds.observed);
  EXPECT_EQ(back.factors(), ds.factors());
  EXPECT_EQ(back.base_len, ds.base_len);
  EXPECT_EQ(back.splits.train_end, ds.splits.train_end);
  EXPECT_EQ(back.splits.val_end, ds.splits.val_end);
  EXPECT_EQ(back.stats.mean, ds.stats.mean);
  EXPECT_EQ(back.stats.std, ds.stats.std);
  fs::remove_all(dir);
}

TEST(Prepared, MissingDirectoryIsAConfigError) {
  EXPECT_THROW(load_prepared(scratch("absent")), ConfigError);
}

TEST(PlanJson, RoundTrip) {
  PatchPlan p{{{48, 12, 0}, {18, 8, 0}, {12, 4, 2}}};
  EXPECT_EQ(plan_from_json(plan_to_json(p)), p);
}

TEST(PlanJson, InconsistentEntryIsRejected) {
  auto j = nlohmann::json::parse(R"({"channels":[{"patch_length":4,"patch_count":2,"dropped":0,"extra":1}]})");
  EXPECT_THROW(plan_from_json(j), ConfigError);
}

TEST(RunConfig, RoundTripAndDefaults) {
  RunConfig c;
  c.model.channel_tokens = 3;
  c.model.mask_strategy = attnmask::MaskStrategy::CD_Mutual_Indexed;
  c.train.learning_rate = 1e-2;
  c.train.seed = 7;
  c.ablations = {"no_patch_masking"};
  auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(back.model.channel_tokens, 3u);
  EXPECT_EQ(back.model.mask_strategy, attnmask::MaskStrategy::CD_Mutual_Indexed);
  EXPECT_EQ(back.train.learning_rate, 1e-2);
  EXPECT_EQ(back.train.seed, 7u);
  EXPECT_EQ(back.ablations, c.ablations);
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  auto empty = config_from_json(nlohmann::json::object());
  EXPECT_EQ(empty.model.d_model, model::ModelConfig{}.d_model);
}

TEST(RunConfig, UnknownKeyAndBadStrategyAreRejected) {
  auto msg = error_of([] { config_from_json(nlohmann::json::parse(R"({"model":{"heads":2}})")); });
  EXPECT_NE(msg.find("config.model.heads"), std::string::npos) << msg;
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"model":{"mask_strategy":"nope"}})")),
               ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"train":{"max_epochs":-1}})")),
               ConfigError);
}

TEST(Files, WriteCreatesParentsAndFormatIsExact) {
  auto dir = scratch("files");
  write_file(dir / "a" / "b.txt", "hello");
  EXPECT_EQ(read_file(dir / "a" / "b.txt"), "hello");
  EXPECT_EQ(std::stod(format_double(0.1)), 0.1);
  EXPECT_THROW(read_file(dir / "missing"), ConfigError);
  fs::remove_all(dir);
}
