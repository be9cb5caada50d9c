#include <doctest.h>

#include <filesystem>
#include <unistd.h>

#include "pocketcm/denoiser.hpp"
#include "pocketcm/io.hpp"

using namespace pocketcm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("pocketcm_io_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("complex json round trip") {
  TempDir tmp;
  SynthesizedComplex sc = synthesize_complex(9);

  SUBCASE("emit then parse is structurally identical") {
    write_complex_json(tmp.path("c.json"), sc.graph, sc.scaffold_mask);
    SynthesizedComplex back = read_complex_json(tmp.path("c.json"));
    REQUIRE(back.graph.atoms.size() == sc.graph.atoms.size());
    for (std::size_t i = 0; i < sc.graph.atoms.size(); ++i) {
      CHECK(back.graph.atoms[i].element == sc.graph.atoms[i].element);
      CHECK(back.graph.atoms[i].role == sc.graph.atoms[i].role);
      for (int c = 0; c < 3; ++c)
        CHECK(back.graph.atoms[i].position[c] == sc.graph.atoms[i].position[c]);  // exact round trip
    }
    CHECK(back.scaffold_mask == sc.scaffold_mask);
    CHECK(back.graph.edges.size() == sc.graph.edges.size());
  }
  SUBCASE("unknown element names the atom index") {
    nlohmann::json j = complex_to_json(sc.graph, sc.scaffold_mask);
    j["atoms"][3]["element"] = "Xx";
    CHECK_THROWS_WITH_AS(complex_from_json(j, "test"), doctest::Contains("atoms[3]"),
                         std::runtime_error);
  }
  SUBCASE("missing scaffold_mask rejected") {
    nlohmann::json j = complex_to_json(sc.graph, sc.scaffold_mask);
    j.erase("scaffold_mask");
    CHECK_THROWS_WITH_AS(complex_from_json(j, "test"), doctest::Contains("scaffold_mask"),
                         std::runtime_error);
  }
  SUBCASE("unknown fields rejected") {
    nlohmann::json j = complex_to_json(sc.graph, sc.scaffold_mask);
    j["surprise"] = 1;
    CHECK_THROWS_WITH_AS(complex_from_json(j, "test"), doctest::Contains("surprise"),
                         std::runtime_error);
  }
  SUBCASE("version mismatch rejected") {
    nlohmann::json j = complex_to_json(sc.graph, sc.scaffold_mask);
    j["format_version"] = 99;
    CHECK_THROWS_WITH_AS(complex_from_json(j, "test"), doctest::Contains("format_version"),
                         std::runtime_error);
  }
  SUBCASE("malformed json carries the path") {
    atomic_write_file(tmp.path("broken.json"), "{not json");
    CHECK_THROWS_WITH_AS(read_complex_json(tmp.path("broken.json")),
                         doctest::Contains("malformed JSON"), std::runtime_error);
  }
}

TEST_CASE("checkpoint io") {
  TempDir tmp;
  DenoiserConfig config;
  config.hidden = 8;
  config.layers = 1;
  Rng rng(4);
  Checkpoint ckpt;
  ckpt.step = 1234;
  ckpt.config_json = "{\"hidden\":8}";
  ckpt.online = init_denoiser_params(config, rng);
  ckpt.ema = ckpt.online;

  SUBCASE("save, load, save is byte-identical") {
    save_checkpoint(tmp.path("a.thcm"), ckpt);
    Checkpoint loaded = load_checkpoint(tmp.path("a.thcm"));
    CHECK(loaded.step == 1234);
    CHECK(loaded.config_json == ckpt.config_json);
    save_checkpoint(tmp.path("b.thcm"), loaded);
    CHECK(read_file(tmp.path("a.thcm")) == read_file(tmp.path("b.thcm")));
  }
  SUBCASE("tensors round-trip bit-exact") {
    save_checkpoint(tmp.path("c.thcm"), ckpt);
    Checkpoint loaded = load_checkpoint(tmp.path("c.thcm"));
    for (std::size_t i = 0; i < ckpt.online.items.size(); ++i) {
      CHECK(loaded.online.items[i].first == ckpt.online.items[i].first);
      CHECK(loaded.online.items[i].second.values == ckpt.online.items[i].second.values);
    }
  }
  SUBCASE("bad magic is a distinct error") {
    atomic_write_file(tmp.path("bad.thcm"), "NOPE....");
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("bad.thcm")), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("truncated file is a distinct error") {
    save_checkpoint(tmp.path("full.thcm"), ckpt);
    const std::string full = read_file(tmp.path("full.thcm"));
    atomic_write_file(tmp.path("cut.thcm"), full.substr(0, full.size() / 2));
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("cut.thcm")), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("version mismatch is a distinct error") {
    save_checkpoint(tmp.path("v.thcm"), ckpt);
    std::string bytes = read_file(tmp.path("v.thcm"));
    bytes[4] = 9;  // version little-endian low byte
    atomic_write_file(tmp.path("v9.thcm"), bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp.path("v9.thcm")), doctest::Contains("version"),
                         std::runtime_error);
  }
  SUBCASE("shape mismatch against a config names the tensor") {
    DenoiserConfig bigger = config;
    bigger.hidden = 16;
    Rng r2(5);
    ParamSet expected = init_denoiser_params(bigger, r2);
    CHECK_THROWS_WITH_AS(validate_checkpoint_shapes(ckpt, expected),
                         doctest::Contains("embed.scaffold.w"), std::runtime_error);
  }
}

TEST_CASE("run config") {
  SUBCASE("to_json/from_json round trip") {
    RunConfig c;
    c.hidden = 48;
    c.seed = 77;
    c.clip_range = 0.2;
    RunConfig back = RunConfig::from_json(c.to_json());
    CHECK(back.hidden == 48);
    CHECK(back.seed == 77);
    CHECK(back.clip_range == 0.2);
    CHECK(back.to_json() == c.to_json());
  }
  SUBCASE("unknown field rejected with its name") {
    nlohmann::json j = RunConfig{}.to_json();
    j["typo_field"] = 1;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(j), doctest::Contains("typo_field"), ConfigError);
  }
  SUBCASE("validation names the offending field") {
    RunConfig c;
    c.ema_decay = 1.5;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("ema_decay"), ConfigError);
    RunConfig c2;
    c2.sizes.scaffold_max = 99;
    CHECK_THROWS_WITH_AS(c2.validate(), doctest::Contains("sizes"), ConfigError);
  }
}

TEST_CASE("misc io helpers") {
  TempDir tmp;
  SUBCASE("atomic write leaves no temp file") {
    atomic_write_file(tmp.path("x.txt"), "hello");
    CHECK(read_file(tmp.path("x.txt")) == "hello");
    CHECK_FALSE(fs::exists(tmp.path("x.txt.tmp")));
  }
  SUBCASE("content hash is stable and content-sensitive") {
    CHECK(content_hash_bytes("abc") == content_hash_bytes("abc"));
    CHECK(content_hash_bytes("abc") != content_hash_bytes("abd"));
    CHECK(hash_hex(content_hash_bytes("abc")).size() == 16);
  }
  SUBCASE("format_double round-trips") {
    for (double v : {1.0 / 3.0, 1e-300, 123456.789, -0.1}) {
      CHECK(std::stod(format_double(v)) == v);
    }
  }
}
