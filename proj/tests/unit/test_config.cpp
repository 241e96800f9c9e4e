#include "clab/config.hpp"
#include "doctest.h"

using namespace clab;

TEST_SUITE("config") {
  TEST_CASE("empty document gives the documented defaults") {
    const RunConfig c = parse_run_config("{}");
    CHECK(c == RunConfig{});
    CHECK(c.generation.train_videos == 200);
    CHECK(c.generation.val_videos == 50);
    CHECK(c.train.aux_weight == 0.005);
    CHECK(c.train.cab.temperature == 0.1);
  }

  TEST_CASE("normalization round trip") {
    const RunConfig c = parse_run_config(R"({
      "seed": 5, "output_dir": "runs/x",
      "data": {"train_videos": 10, "degradation": {"blur_sigma_range": [0.5, 1.0]}},
      "train": {"epochs": 3, "lr_drop_epochs": [2], "warmup_steps": 0},
      "cab": {"enabled": true, "temperature": 0.5},
      "dlw": {"enabled": false, "initial_weight": 0.01, "cutoff_step": 100},
      "detector": {"tap_stage": 0},
      "sweep": {"weight": [0.1]}
    })");
    CHECK(c.seed == 5);
    CHECK(c.train.warmup_steps == 0);
    CHECK(c.train.seed == 5);
    CHECK(c.generation.degradation.blur_sigma_range == std::array<double, 2>{0.5, 1.0});
    CHECK(c.train.dlw_cutoff_step == 100);
    const std::string norm = normalized_config(c);
    const RunConfig again = parse_run_config(norm);
    CHECK(again == c);
    CHECK(normalized_config(again) == norm);
    CHECK(parse_run_config(R"({"dlw": {"cutoff_step": null}})").train.dlw_cutoff_step == std::nullopt);
  }

  TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS(parse_run_config(R"({"sead": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"epoch": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"degradation": {"blur": 1}}})"), ConfigError);
  }

  TEST_CASE("invalid values are rejected before any computation") {
    CHECK_THROWS_AS(parse_run_config(R"({"cab": {"temperature": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"train_videos": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"learning_rate": -1}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": "seven"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"detector": {"num_classes": 4}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"sweep": {"temperature": [0.1, 0]}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("config hash tracks the training configuration") {
    TrainConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.cab.temperature = 0.5;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }
}
