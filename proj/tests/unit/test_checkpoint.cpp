#include <filesystem>

#include "clab/checkpoint.hpp"
#include "clab/verification.hpp"
#include "doctest.h"

using namespace clab;
namespace fs = std::filesystem;

namespace {

Checkpoint random_checkpoint(bool with_cab) {
  Checkpoint c;
  c.step = 42;
  c.config_hash = 0xfeedfacecafebeefULL;
  c.seed = 7;
  Rng rng(7);
  c.detector = init_detector_params<float>(c.detector_config, rng);
  c.detector_momentum = init_detector_params<float>(c.detector_config, rng);
  if (with_cab) {
    CabConfig cab{64, 16, 8, 4, 0.1};
    c.cab_config = cab;
    c.cab = init_cab_params<float>(cab, rng);
    c.cab_momentum = init_cab_params<float>(cab, rng);
  }
  return c;
}

void check_same(const Checkpoint& a, const Checkpoint& b) {
  CHECK(a.step == b.step);
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.seed == b.seed);
  CHECK(a.detector_config == b.detector_config);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip with and without the auxiliary block") {
    for (bool with_cab : {false, true}) {
      const Checkpoint c = random_checkpoint(with_cab);
      const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(c));
      check_same(c, back);
      CHECK(back.has_auxiliary_branch() == with_cab);
      const auto p = c.detector.named();
      const auto q = back.detector.named();
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(*p[i].second == *q[i].second);
    }
  }

  TEST_CASE("file round trip") {
    const fs::path path = fs::temp_directory_path() / "clab_test_ckpt" / "a.ckpt";
    const Checkpoint c = random_checkpoint(true);
    save_checkpoint(c, path);
    check_same(c, load_checkpoint(path));
    fs::remove_all(path.parent_path());
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }

  TEST_CASE("stripping keeps the detector state byte for byte") {
    const Checkpoint c = random_checkpoint(true);
    const Checkpoint s = strip_auxiliary_branch(c);
    CHECK_FALSE(s.has_auxiliary_branch());
    CHECK(detector_state_bytes(s) == detector_state_bytes(c));
    CHECK(serialize_checkpoint(s).size() < serialize_checkpoint(c).size());
  }

  TEST_CASE("corrupted files are rejected") {
    const std::string bytes = serialize_checkpoint(random_checkpoint(true));
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), std::runtime_error);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), std::runtime_error);
  }

  TEST_CASE("detections are identical with the auxiliary block stripped") {
    const CheckResult r = check_cab_removal(31);
    INFO(r.detail);
    CHECK(r.passed);
  }
}
