#include "clab/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "clab/boxes.hpp"
#include "clab/config.hpp"
#include "clab/contrastive.hpp"
#include "clab/dlw.hpp"
#include "clab/evaluation.hpp"

namespace clab {
namespace {

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  CheckResult r;
  r.name = name;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::vector<int> layout(std::size_t videos, std::size_t frames) {
  std::vector<int> index;
  for (std::size_t n = 0; n < videos; ++n) index.insert(index.end(), frames, static_cast<int>(n));
  return index;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

// Entries within the absolute tolerance count as exact; near-zero gradients make
// the relative error meaningless there.
double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kGradientAbsTolerance) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradientError {
  double relative = 0;  // over entries outside the absolute tolerance
  double absolute = 0;
  void merge(const GradientError& o) {
    relative = std::max(relative, o.relative);
    absolute = std::max(absolute, o.absolute);
  }
  std::string describe() const {
    return "max abs diff " + sci(absolute) + ", max relative error " + sci(relative) + " (limit " +
           sci(kGradientTolerance) + ", abs tolerance " + sci(kGradientAbsTolerance) + ")";
  }
};

// Central-difference sweep over every entry of `x`.
template <typename Loss>
GradientError worst_gradient_error(Tensor<double>& x, const Tensor<double>& analytic, Loss&& loss) {
  GradientError worst;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kFiniteDifferenceStep;
    const double up = loss();
    x[i] = keep - kFiniteDifferenceStep;
    const double down = loss();
    x[i] = keep;
    const double numeric = (up - down) / (2 * kFiniteDifferenceStep);
    worst.merge({relative_error(analytic[i], numeric), std::abs(analytic[i] - numeric)});
  }
  return worst;
}

bool same_detections(const std::vector<std::vector<Detection>>& a, const std::vector<std::vector<Detection>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      const Detection& x = a[i][j];
      const Detection& y = b[i][j];
      if (x.class_id != y.class_id || std::memcmp(&x.score, &y.score, sizeof(double)) != 0 ||
          std::memcmp(&x.box, &y.box, sizeof(Box)) != 0) {
        return false;
      }
    }
  }
  return true;
}

Tensor<float> all_frames(const Dataset& ds) {
  std::vector<const Image*> frames;
  for (const auto& v : ds.videos) {
    for (const auto& f : v.frames) frames.push_back(&f);
  }
  return frames_to_tensor(frames);
}

}  // namespace

CheckResult check_oracle_equivalence(std::uint64_t seed, std::size_t cases, InfoNceFunction impl) {
  if (!impl) {
    impl = [](const Tensor<double>& z, std::span<const int> idx, double tau) { return info_nce_loss(z, idx, tau); };
  }
  return timed("InfoNCE oracle equivalence", [&](CheckResult& r) {
    constexpr std::size_t kVideos[] = {2, 3, 4}, kFrames[] = {2, 3}, kDims[] = {4, 8, 16};
    constexpr double kTemps[] = {0.05, 0.1, 0.5, 1.0};
    Rng rng(seed);
    double worst = 0;
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t n = kVideos[rng.uniform_index(3)], t = kFrames[rng.uniform_index(2)],
                        d = kDims[rng.uniform_index(3)];
      const double tau = kTemps[rng.uniform_index(4)];
      const auto z = random_tensor({n * t, d}, rng);
      const auto idx = layout(n, t);
      const double ref = info_nce_oracle(z, idx, tau);
      worst = std::max(worst, std::abs(impl(z, idx, tau) - ref) / std::abs(ref));
    }
    r.passed = worst < kOracleTolerance;
    r.detail = std::to_string(cases) + " batches, max relative difference " + sci(worst) + " (limit " +
               sci(kOracleTolerance) + ")";
  });
}

double info_nce_mutant(const Tensor<double>& embeddings, std::span<const int> video_index, double temperature) {
  const std::size_t rows = embeddings.dim(0);
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < rows; ++a) {
    std::vector<double> sims(rows);
    for (std::size_t k = 0; k < rows; ++k) sims[k] = cosine_sim<double>(embeddings.outer(a), embeddings.outer(k)) / temperature;
    // Mutation: the last non-anchor row never enters the denominator.
    const std::size_t dropped = a + 1 == rows ? rows - 2 : rows - 1;
    double denom = 0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k != a && k != dropped) denom += std::exp(sims[k]);
    }
    for (std::size_t p = 0; p < rows; ++p) {
      if (p == a || video_index[p] != video_index[a]) continue;
      total += std::log(denom) - sims[p];
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

CheckResult check_mutation_detected(std::uint64_t seed) {
  return timed("Mutation negative control", [&](CheckResult& r) {
    const CheckResult mutated = check_oracle_equivalence(seed, 100, info_nce_mutant);
    r.passed = !mutated.passed;
    r.detail = std::string(mutated.passed ? "perturbed loss was NOT caught: " : "perturbed loss rejected: ") +
               mutated.detail;
  });
}

CheckResult check_closed_form() {
  return timed("Closed-form InfoNCE on identical embeddings", [](CheckResult& r) {
    double worst = 0;
    for (std::size_t n : {2, 3, 4}) {
      for (std::size_t t : {2, 3}) {
        for (double tau : {0.05, 0.1, 0.5, 1.0}) {
          Tensor<double> z({n * t, 8});
          for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.25 + 0.1 * static_cast<double>(i % 8);
          const double expected = std::log(static_cast<double>(n * t - 1));
          worst = std::max(worst, std::abs(info_nce_loss(z, layout(n, t), tau) - expected));
        }
      }
    }
    r.passed = worst < kClosedFormTolerance;
    r.detail = "max |L - log(NT-1)| " + sci(worst) + " (limit " + sci(kClosedFormTolerance) + ")";
  });
}

CheckResult check_info_nce_gradient(std::uint64_t seed) {
  return timed("InfoNCE gradient vs finite differences", [&](CheckResult& r) {
    Rng rng(seed);
    GradientError worst;
    std::size_t entries = 0;
    for (auto [n, t, d, tau] : {std::tuple{2, 2, 4, 0.1}, std::tuple{3, 3, 8, 0.5}, std::tuple{4, 2, 16, 1.0},
                                std::tuple{2, 3, 8, 0.05}}) {
      auto z = random_tensor({static_cast<std::size_t>(n * t), static_cast<std::size_t>(d)}, rng);
      const auto idx = layout(n, t);
      const auto analytic = info_nce_loss_with_grad(z, idx, tau).grad;
      worst.merge(worst_gradient_error(z, analytic, [&] { return info_nce_loss(z, idx, tau); }));
      entries += z.size();
    }
    r.passed = worst.relative < kGradientTolerance;
    r.detail = std::to_string(entries) + " entries, " + worst.describe();
  });
}

CheckResult check_cab_gradient(std::uint64_t seed) {
  return timed("CAB gradient vs finite differences", [&](CheckResult& r) {
    Rng rng(seed);
    const CabConfig cfg{3, 8, 6, 4, 0.1};
    auto params = init_cab_params<double>(cfg, rng);
    for (auto& [name, t] : params.named()) {
      for (auto& v : t->values()) v += 0.05 * rng.normal();  // non-zero biases
    }
    auto fmap = random_tensor({4, 3, 5, 5}, rng);
    const auto idx = layout(2, 2);
    auto loss = [&] { return info_nce_loss(cab_forward(params, fmap), idx, cfg.temperature); };

    const auto trace = cab_forward_trace(params, fmap);
    const auto nce = info_nce_loss_with_grad(trace.output, idx, cfg.temperature);
    CabParams<double> grads(cfg);
    const auto grad_fmap = cab_backward(params, fmap, trace, nce.grad, grads);

    GradientError worst;
    std::size_t entries = 0;
    auto named = params.named();
    const auto named_grads = grads.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      worst.merge(worst_gradient_error(*named[i].second, *named_grads[i].second, loss));
      entries += named[i].second->size();
    }
    worst.merge(worst_gradient_error(fmap, grad_fmap, loss));
    entries += fmap.size();
    r.passed = worst.relative < kGradientTolerance;
    r.detail = std::to_string(entries) + " parameters and inputs, " + worst.describe();
  });
}

CheckResult check_detection_gradient(std::uint64_t seed) {
  return timed("Detection loss gradient vs finite differences", [&](CheckResult& r) {
    Rng rng(seed);
    constexpr std::size_t kClasses = 3;
    auto head = random_tensor({2, kClasses + 5, 3, 3}, rng, 0.3);
    std::vector<std::vector<GroundTruthBox>> targets = {
        {{{1, 2, 7, 6}, 0, 0}, {{9, 10, 21, 20}, 2, 1}},
        {{{12, 3, 20, 9}, 1, 0}},
    };
    const auto analytic = detection_loss(head, kClasses, 8.0, std::span<const std::vector<GroundTruthBox>>(targets));
    auto loss = [&] {
      const auto l = detection_loss(head, kClasses, 8.0, std::span<const std::vector<GroundTruthBox>>(targets));
      return l.regression + l.classification;
    };
    const GradientError worst = worst_gradient_error(head, analytic.grad, loss);
    r.passed = worst.relative < kGradientTolerance;
    r.detail = std::to_string(head.size()) + " head outputs, " + worst.describe();
  });
}

CheckResult check_dlw_exactness(std::uint64_t seed) {
  return timed("DLW schedule exactness", [&](CheckResult& r) {
    const DlwConfig cfg{0.005, 750};
    std::vector<std::string> failures;
    if (weight_at(0, cfg) != 0.005) failures.push_back("w(0) != 0.005");
    if (weight_at(750, cfg) != 0.0) failures.push_back("w(k) != 0");
    for (std::int64_t t : {751, 1000, 1498, 1000000}) {
      if (weight_at(t, cfg) != 0.0) failures.push_back("w(" + std::to_string(t) + ") != 0");
    }
    if (weight_at(375, cfg) != 0.0025) failures.push_back("w(k/2) != 0.0025");
    Rng rng(seed);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto t = static_cast<std::int64_t>(rng.uniform_index(751));
      const auto s = static_cast<std::int64_t>(rng.uniform_index(751));
      // Affine in t: w(t) - w(s) = -w (t - s) / k, and w(t) = w (1 - t / k).
      worst = std::max(worst, std::abs(weight_at(t, cfg) - 0.005 * (1.0 - static_cast<double>(t) / 750.0)));
      worst = std::max(worst, std::abs((weight_at(t, cfg) - weight_at(s, cfg)) +
                                       0.005 * static_cast<double>(t - s) / 750.0));
    }
    if (worst >= kLinearityTolerance) failures.push_back("linearity residual " + sci(worst));
    const DlwConfig constant{0.005, std::nullopt};
    if (weight_at(0, constant) != 0.005 || weight_at(123456, constant) != 0.005) {
      failures.push_back("constant mode is not constant");
    }
    r.passed = failures.empty();
    r.detail = failures.empty() ? "endpoints exact, midpoint 0.0025, 1000 sampled points within " + sci(worst)
                                : failures.front();
  });
}

CheckResult check_evaluator(std::uint64_t seed) {
  return timed("Evaluator and NMS properties", [&](CheckResult& r) {
    std::vector<std::string> failures;
    const std::vector<GroundTruthBox> two = {{{0, 0, 10, 10}, 0, 0}, {{20, 20, 30, 30}, 0, 1}};
    const auto perfect = average_precision({{{0, 0, 10, 10}, 0, 0.9}, {{20, 20, 30, 30}, 0, 0.8}}, two);
    if (!perfect || std::abs(*perfect - 1.0) > kApTolerance) failures.push_back("perfect detector AP != 1");
    const auto shifted = average_precision({{{5, 5, 15, 15}, 0, 0.9}}, {{{0, 0, 10, 10}, 0, 0}});
    if (!shifted || std::abs(*shifted) > kApTolerance) failures.push_back("sub-threshold IoU AP != 0");
    const auto mixed = average_precision(
        {{{0, 0, 10, 10}, 0, 0.9}, {{50, 50, 60, 60}, 0, 0.8}, {{20, 20, 30, 30}, 0, 0.7}}, two);
    if (!mixed || std::abs(*mixed - kFrozenApTpFpTp) > kApTolerance) failures.push_back("frozen TP/FP/TP case");

    Rng rng(seed);
    constexpr double kThreshold = 0.5;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<Detection> dets(1 + rng.uniform_index(30));
      for (auto& d : dets) {
        const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
        d.box = {x, y, x + rng.uniform(2, 30), y + rng.uniform(2, 30)};
        d.class_id = static_cast<int>(rng.uniform_index(3));
        d.score = rng.uniform();
      }
      const auto kept = nms(dets, kThreshold);
      if (nms(kept, kThreshold).size() != kept.size()) {
        failures.push_back("NMS not idempotent");
        break;
      }
      bool ok = true;
      for (std::size_t i = 0; i < kept.size() && ok; ++i) {
        for (std::size_t j = i + 1; j < kept.size(); ++j) {
          if (kept[i].class_id == kept[j].class_id && iou(kept[i].box, kept[j].box) > kThreshold) ok = false;
        }
      }
      // Every suppressed box overlaps a kept, no-lower-scored box of its class.
      for (const auto& d : dets) {
        const bool present = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
          return k.class_id == d.class_id && k.score == d.score && std::memcmp(&k.box, &d.box, sizeof(Box)) == 0;
        });
        if (present) continue;
        const bool covered = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
          return k.class_id == d.class_id && k.score >= d.score && iou(k.box, d.box) > kThreshold;
        });
        if (!covered) ok = false;
      }
      if (!ok) {
        failures.push_back("NMS threshold property violated in trial " + std::to_string(trial));
        break;
      }
    }
    r.passed = failures.empty();
    r.detail = failures.empty() ? "hand-built AP cases within 1e-9; NMS idempotent and threshold-respecting on 1000 random sets"
                                : failures.front();
  });
}

TinySetup tiny_setup(std::uint64_t seed) {
  GenerationConfig g;
  g.train_videos = 12;
  g.val_videos = 4;
  g.frames_per_video = 4;
  g.height = g.width = 64;
  g.min_scale = 6;
  g.max_scale = 10;
  TinySetup s{generate_dataset(g, seed, Split::kTrain), generate_dataset(g, seed, Split::kVal), {}};
  TrainConfig& c = s.config;
  c.seed = seed;
  c.epochs = 2;
  c.steps_per_epoch = 6;
  c.videos_per_batch = 4;
  c.frames_per_video = 2;
  c.lr_drop_epochs = {1};
  c.warmup_steps = 3;
  c.log_every = 3;
  c.probe_videos = 4;
  c.cab = {0, 16, 32, 16, 0.1};
  c.aux_weight = 0.05;
  return s;
}

CheckResult check_cab_removal(std::uint64_t seed) {
  return timed("CAB removal invariance at inference", [&](CheckResult& r) {
    TinySetup s = tiny_setup(seed);
    s.config.dlw_enabled = false;
    s.config.detector.score_threshold = 0.001;  // a briefly trained model must still emit boxes
    const auto trained = train(s.config, s.train).checkpoint;
    if (!trained.cab) throw std::logic_error("trained checkpoint has no auxiliary block");
    const auto with_cab = deserialize_checkpoint(serialize_checkpoint(trained));
    const auto without_cab = deserialize_checkpoint(serialize_checkpoint(strip_auxiliary_branch(trained)));
    const auto images = all_frames(s.val);
    const auto a = infer(with_cab.detector, with_cab.detector_config, images);
    const auto b = infer(without_cab.detector, without_cab.detector_config, images);
    std::size_t count = 0;
    for (const auto& f : a) count += f.size();
    r.passed = !without_cab.cab && same_detections(a, b);
    r.detail = std::to_string(images.dim(0)) + " frames, " + std::to_string(count) + " detections, " +
               (r.passed ? "bit-identical with and without the auxiliary block" : "outputs differ");
  });
}

CheckResult check_zero_weight(std::uint64_t seed) {
  return timed("Zero-weight equivalence", [&](CheckResult& r) {
    TinySetup s = tiny_setup(seed);
    TrainConfig zero = s.config;
    zero.aux_weight = 0.0;
    TrainConfig off = s.config;
    off.cab_enabled = false;
    const auto a = train(zero, s.train).checkpoint;
    const auto b = train(off, s.train).checkpoint;
    TrainOptions forced;
    forced.force_auxiliary = true;
    const auto c = train(zero, s.train, forced).checkpoint;
    const bool bitwise = detector_state_bytes(a) == detector_state_bytes(b);
    // Forcing the branch at zero weight multiplies its gradient by 0; parameters must not move.
    bool forced_equal = true;
    const auto pa = b.detector.named();
    const auto pc = c.detector.named();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i].second == *pc[i].second)) forced_equal = false;
    }
    r.passed = bitwise && forced_equal;
    r.detail = std::string(bitwise ? "detector state bit-identical to the branch-disabled run"
                                   : "detector state differs from the branch-disabled run") +
               (forced_equal ? "; forced zero-weight pass leaves parameters unchanged"
                             : "; forced zero-weight pass changed parameters");
  });
}

CheckResult check_zero_temperature_rejected() {
  return timed("Zero temperature rejected by config validation", [](CheckResult& r) {
    try {
      parse_run_config(R"({"cab": {"temperature": 0}})");
      r.detail = "config with temperature 0 was accepted";
    } catch (const ConfigError& e) {
      r.passed = true;
      r.detail = std::string("rejected: ") + e.what();
    }
  });
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  return {check_oracle_equivalence(seed),
          check_mutation_detected(seed),
          check_closed_form(),
          check_info_nce_gradient(seed + 1),
          check_cab_gradient(seed + 2),
          check_detection_gradient(seed + 3),
          check_dlw_exactness(seed + 4),
          check_evaluator(seed + 5),
          check_cab_removal(seed + 6),
          check_zero_weight(seed + 7),
          check_zero_temperature_rejected()};
}

std::string format_report(std::span<const CheckResult> results) {
  std::ostringstream out;
  std::size_t passed = 0;
  out << "Verification report\n";
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(48) << r.name << std::right << std::fixed
        << std::setprecision(2) << std::setw(8) << r.seconds << "s  " << r.detail << '\n';
    passed += r.passed;
  }
  out << passed << "/" << results.size() << " checks passed\n";
  return out.str();
}

}  // namespace clab
