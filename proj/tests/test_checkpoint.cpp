#include <fstream>

#include "crfp/checkpoint.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crfp;
using crfp::test::TempDir;

namespace {

std::vector<CkptRecord> sample_records() {
  return {
      {"a.w", {2, 3}, {1.0f, 2.0f, 3.0f, -4.0f, 5.5f, 0.0f}},
      {"a.b", {2}, {0.25f, -0.75f}},
      {"scalar", {1}, {42.0f}},
  };
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void spit(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trips config and records bitwise") {
  TempDir tmp;
  std::string path = tmp.str("m.crfp");
  std::string cfg = "crfp.scale = 8\ntrain.seed = 7\n";
  save_checkpoint(path, cfg, sample_records());

  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.config == cfg);
  REQUIRE(ck.records.size() == 3);
  CHECK(ck.records[0].name == "a.w");
  CHECK(ck.records[0].shape == std::vector<int>{2, 3});
  CHECK(ck.records[0].data == sample_records()[0].data);
  CHECK(ck.records[2].data[0] == 42.0f);

  CHECK(ck.find("a.b") != nullptr);
  CHECK(ck.find("nope") == nullptr);
  CHECK(ck.require("a.b").data[1] == -0.75f);
  CHECK_THROWS_AS(ck.require("nope"), DataError);
}

TEST_CASE("checkpoint save validates extent/payload agreement") {
  TempDir tmp;
  std::vector<CkptRecord> bad = {{"x", {2, 2}, {1.0f, 2.0f, 3.0f}}};
  CHECK_THROWS_AS(save_checkpoint(tmp.str("bad.crfp"), "", bad), DataError);
}

TEST_CASE("checkpoint load rejects malformed files") {
  TempDir tmp;
  std::string path = tmp.str("m.crfp");
  save_checkpoint(path, "k = v\n", sample_records());
  std::string good = slurp(path);

  SUBCASE("bad magic") {
    std::string t = good;
    t[0] = 'X';
    spit(tmp.str("t.crfp"), t);
    CHECK_THROWS_AS(load_checkpoint(tmp.str("t.crfp")), DataError);
  }
  SUBCASE("unsupported version") {
    std::string t = good;
    t[8] = 9;
    spit(tmp.str("t.crfp"), t);
    CHECK_THROWS_AS(load_checkpoint(tmp.str("t.crfp")), DataError);
  }
  SUBCASE("truncated payload") {
    spit(tmp.str("t.crfp"), good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(tmp.str("t.crfp")), DataError);
  }
  SUBCASE("trailing bytes") {
    spit(tmp.str("t.crfp"), good + "xx");
    CHECK_THROWS_AS(load_checkpoint(tmp.str("t.crfp")), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(tmp.str("absent.crfp")), IoError); }
}

TEST_CASE("empty record list and empty config are legal") {
  TempDir tmp;
  save_checkpoint(tmp.str("e.crfp"), "", {});
  Checkpoint ck = load_checkpoint(tmp.str("e.crfp"));
  CHECK(ck.config.empty());
  CHECK(ck.records.empty());
}
