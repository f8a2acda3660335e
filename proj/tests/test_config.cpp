#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "msth/config.hpp"

using namespace msth;

TEST_SUITE("config") {
  TEST_CASE("published constants and provenance") {
    TrainConfig c;
    CHECK(c.lambda_u == 3e-5);
    CHECK(c.gamma == 3e-4);
    CHECK(c.lambda_dist == 2e-2);
    CHECK(c.n_samples == 128);
    CHECK(c.mask_resolution == 128);
    const auto j = nlohmann::json::parse(c.resolved_json());
    for (const char* k : {"lambda_u", "gamma", "lambda_dist", "n_samples", "mask_resolution"})
      CHECK(j[k]["provenance"] == "paper");
    CHECK(j["lr_grid"]["provenance"] == "invented");
    CHECK(j["gamma"]["value"] == 3e-4);
    CHECK(j["variant"]["value"] == "masked");
    int keys = 0;
    c.visit([&](const char*, const auto&, Provenance) { ++keys; });
    CHECK(j.size() == std::size_t(keys));
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("text round trip") {
    TrainConfig a;
    a.set("lr_grid", "0.0123456789012345678");
    a.set("variant", "additive");
    a.set("seed", "18446744073709551615");
    a.set("deterministic", "false");
    TrainConfig b;
    b.parse_text(a.to_text(), "mem");
    CHECK(b.to_text() == a.to_text());
    CHECK(b.lr_grid == a.lr_grid);
    CHECK(b.seed == ~0ull);
    CHECK(b.get("variant") == "additive");
  }

  TEST_CASE("parsing") {
    TrainConfig c;
    c.parse_text("# comment\n[optim]\nsteps = 12  # trailing\n\nlambda_u=0\nvariant = \"pure4d\"\n", "mem");
    CHECK(c.steps == 12);
    CHECK(c.lambda_u == 0);
    CHECK(c.variant == "pure4d");
    CHECK_THROWS_AS(c.parse_text("steps 12\n", "mem"), ConfigError);
    CHECK_THROWS_AS(c.parse_text("stepz = 12\n", "mem"), ConfigError);
    CHECK_THROWS_AS(c.set("steps", "1.5"), ConfigError);
    CHECK_THROWS_AS(c.set("gamma", "abc"), ConfigError);
    CHECK_THROWS_AS(c.set("deterministic", "yes"), ConfigError);
    CHECK_THROWS_AS(c.get("nope"), ConfigError);
    try {
      c.parse_text("steps = 1\nbad = 2\n", "f.cfg");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("f.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(c.load_file("/nonexistent/x.cfg"), ConfigError);
  }

  TEST_CASE("validation") {
    auto bad = [](const char* k, const char* v) {
      TrainConfig c;
      c.set(k, v);
      CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    bad("batch_rays", "0");
    bad("lr_grid", "0");
    bad("epsilon", "1");
    bad("p_uniform", "1.5");
    bad("gamma", "-1");
    bad("variant", "hybrid");
    bad("mine_samples", "1");
  }

  TEST_CASE("model config") {
    TrainConfig c;
    c.time_max_resolution = 32;
    const Aabb box{{-1, -1, -1}, {1, 1, 1}};
    const auto m = c.model_config(box, 10);
    CHECK(m.field.grid4d.time_max_resolution == 10);
    CHECK(m.proposal.time_resolution == 8);
    CHECK(c.model_config(box, 1).proposal.time_resolution == 2);
    CHECK(m.field.mask_resolution == 128);
    CHECK(m.field.grid4d.log2_table_size == 19);
    CHECK(m.field.grid4d.dims == 4);
    const auto p = c.pass_options();
    CHECK(p.n_samples == 128);
    CHECK(p.weights.gamma == 3e-4);
  }
}
