#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "featlens/analysis.hpp"
#include "featlens/artifacts.hpp"
#include "featlens/config.hpp"
#include "featlens/train.hpp"

using namespace featlens;

namespace {

HostConfig tiny_host() {
  HostConfig cfg;
  cfg.input_h = 28;
  cfg.input_w = 28;
  cfg.stage_widths = {8, 8, 16};
  cfg.bottleneck_n = 8;
  return cfg;
}

FrozenHost quick_host(uint64_t seed = 301) { return freeze(HostModel(tiny_host(), seed)); }

}  // namespace

TEST_SUITE("lr schedule") {
  TEST_CASE("halves at every period boundary") {
    TrainConfig cfg;
    cfg.initial_lr = 0.01;
    cfg.lr_decay = 0.5;
    cfg.decay_period_epochs = 1;
    CHECK(lr_at(cfg, 0) == doctest::Approx(0.01));
    CHECK(lr_at(cfg, 1) == doctest::Approx(0.005));
    CHECK(lr_at(cfg, 2) == doctest::Approx(0.0025));
    cfg.decay_period_epochs = 2;
    CHECK(lr_at(cfg, 1) == doctest::Approx(0.01));
    CHECK(lr_at(cfg, 2) == doctest::Approx(0.005));
    for (int e = 0; e < 9; ++e) CHECK(lr_at(cfg, e + 1) <= lr_at(cfg, e));
    CHECK_THROWS(lr_at(cfg, -1));
  }
}

TEST_SUITE("aug policy") {
  TEST_CASE("validation") {
    AugPolicy p = AugPolicy::small_dataset_rotations();
    p.validate();
    AugPolicy bad{{{TransformSpec::identity(), 0.7}}};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("sum"), std::runtime_error);
  }

  TEST_CASE("empirical frequencies track the table within 0.02") {
    AugPolicy p = AugPolicy::small_dataset_rotations();
    Rng rng(401);
    std::map<std::string, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      TransformSpec s = p.sample(rng);
      counts[s.kind == TransformKind::Identity ? "none"
                                               : "rot" + std::to_string(int(s.angle_deg))]++;
    }
    CHECK(std::abs(counts["none"] / double(draws) - 0.4) < 0.02);
    for (const char* key : {"rot90", "rot180", "rot270"})
      CHECK(std::abs(counts[key] / double(draws) - 0.2) < 0.02);
  }

  TEST_CASE("degenerate policy equals plain host training bit for bit") {
    Dataset ds = make_synth_digits(96, 403, "train");
    TrainConfig tc;
    tc.epochs = 1;
    tc.subset = 64;
    tc.batch_size = 32;
    tc.seed = 405;
    HostTrainResult a = train_host(ds, tiny_host(), tc);
    HostTrainResult b = train_dataaug(ds, tiny_host(), AugPolicy::none(), tc);
    CHECK(a.model.checksum() == b.model.checksum());
  }
}

TEST_SUITE("pearson") {
  TEST_CASE("identities and the hand-computed example") {
    std::vector<double> a = {1, 2, 3};
    std::vector<double> neg = {-1, -2, -3};
    std::vector<double> b = {1, 2, 4};
    CHECK(pearson(std::span<const double>(a), std::span<const double>(a)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson(std::span<const double>(a), std::span<const double>(neg)) ==
          doctest::Approx(-1.0).epsilon(1e-12));
    // 3 / sqrt(2 * 14/3)
    CHECK(pearson(std::span<const double>(a), std::span<const double>(b)) ==
          doctest::Approx(0.9819805060619656).epsilon(1e-9));
  }

  TEST_CASE("degenerate input raises instead of returning NaN") {
    std::vector<double> flat = {2, 2, 2};
    std::vector<double> a = {1, 2, 3};
    CHECK_THROWS_WITH_AS(pearson(std::span<const double>(flat), std::span<const double>(a)),
                         doctest::Contains("zero-variance"), std::runtime_error);
    std::vector<double> one = {1};
    CHECK_THROWS(pearson(std::span<const double>(one), std::span<const double>(one)));
  }

  TEST_CASE("invariant under positive affine rescaling and symmetric") {
    Rng rng(407);
    std::vector<double> a(64), b(64), a2(64);
    for (size_t i = 0; i < 64; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      a2[i] = 3.0 * a[i] + 7.0;
    }
    const double r1 = pearson(std::span<const double>(a), std::span<const double>(b));
    const double r2 = pearson(std::span<const double>(a2), std::span<const double>(b));
    const double r3 = pearson(std::span<const double>(b), std::span<const double>(a));
    CHECK(r1 == doctest::Approx(r2).epsilon(1e-9));
    CHECK(r1 == doctest::Approx(r3).epsilon(1e-12));
  }
}

TEST_SUITE("regression") {
  TEST_CASE("two points define the line") {
    Regression fit = regress_corr_accuracy({{0, 0}, {1, 1}});
    CHECK(fit.slope == doctest::Approx(1.0));
    CHECK(fit.intercept == doctest::Approx(0.0));
    CHECK(fit.r == doctest::Approx(1.0));
  }

  TEST_CASE("collinear points give |r| = 1") {
    Regression fit = regress_corr_accuracy({{0, 1}, {0.5, 0.5}, {1, 0}});
    CHECK(fit.r == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(fit.slope == doctest::Approx(-1.0));
  }

  TEST_CASE("three-point least squares") {
    Regression fit = regress_corr_accuracy({{0, 0}, {0.5, 0.4}, {1, 1}});
    CHECK(fit.slope == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.intercept == doctest::Approx(-1.0 / 30.0).epsilon(1e-6));
    CHECK(fit.r == doctest::Approx(0.9933992677987828).epsilon(1e-9));
  }

  TEST_CASE("degenerate inputs raise") {
    CHECK_THROWS(regress_corr_accuracy({{0.5, 1.0}}));
    CHECK_THROWS_WITH_AS(regress_corr_accuracy({{0.5, 1.0}, {0.5, 0.0}}),
                         doctest::Contains("constant"), std::runtime_error);
  }
}

TEST_SUITE("evaluate_accuracy") {
  TEST_CASE("an oracle classifier scores 1.0 and ordering does not matter") {
    Dataset ds = make_synth_digits(64, 409, "t10k");
    BatchPredictor oracle = [](const Dataset& d, const std::vector<int>& idx) {
      std::vector<float> logits(idx.size() * 10, 0.0f);
      for (size_t i = 0; i < idx.size(); ++i)
        logits[i * 10 + d.labels[size_t(idx[i])]] = 1.0f;
      return Tensor::from_data({int(idx.size()), 10}, std::move(logits));
    };
    EvalSpec spec;
    CHECK(evaluate_accuracy(oracle, ds, spec).accuracy == 1.0);
    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(411);
    rng.shuffle(perm);
    Dataset shuffled = ds.subset(perm);
    CHECK(evaluate_accuracy(oracle, shuffled, spec).accuracy == 1.0);
  }

  TEST_CASE("angle filter keeps [45, 315] and drops slight rotations") {
    Dataset ds = make_synth_digits(8, 413, "t10k");
    ds.specs.assign(8, TransformSpec::rotation(30.0));  // all excluded
    ds.specs[2] = TransformSpec::rotation(90.0);
    ds.specs[5] = TransformSpec::rotation(314.0);
    ds.specs[6] = TransformSpec::rotation(315.0);  // inclusive upper bound
    int seen = 0;
    BatchPredictor counter = [&seen](const Dataset& d, const std::vector<int>& idx) {
      seen += int(idx.size());
      (void)d;
      return Tensor::zeros({int(idx.size()), 10});
    };
    EvalSpec spec;
    spec.apply_angle_filter = true;
    evaluate_accuracy(counter, ds, spec);
    CHECK(seen == 3);
    ds.specs.assign(8, TransformSpec::rotation(10.0));
    CHECK_THROWS_WITH_AS(evaluate_accuracy(counter, ds, spec), doctest::Contains("no images"),
                         std::runtime_error);
  }

  TEST_CASE("untrained host sits near chance on balanced labels") {
    FrozenHost host = quick_host(417);
    Dataset ds = make_synth_digits(400, 419, "t10k");
    EvalSpec spec;
    AccuracyReport rep = evaluate_accuracy(host_predictor(host), ds, spec);
    CHECK(rep.accuracy < 0.35);  // chance is 0.1
    CHECK(rep.total == 400);
  }
}

TEST_SUITE("lens pipeline integration") {
  TEST_CASE("identity bin reproduces host logits bit-exactly") {
    FrozenHost host = quick_host(421);
    Dataset ds = make_synth_digits(32, 423, "t10k");
    LensRegistry registry;  // only the identity pass-through
    EvalSpec spec;
    std::vector<int> idx(32);
    std::iota(idx.begin(), idx.end(), 0);
    Tensor in = make_input_batch(ds, idx, host.config().input_h, host.config().input_w);
    Tensor host_logits = host.forward_with_taps(in).logits;
    Tensor lens_logits = apply_lens_pipeline(
        host, registry, in, std::vector<TransformSpec>(32, TransformSpec::identity()),
        LensSelect::TrueTransform);
    CHECK(std::vector<float>(lens_logits.data().begin(), lens_logits.data().end()) ==
          std::vector<float>(host_logits.data().begin(), host_logits.data().end()));
  }

  TEST_CASE("deterministic: same image and spec give identical logits") {
    FrozenHost host = quick_host(427);
    Dataset ds = make_synth_digits(8, 429, "t10k");
    Rng rng(431);
    LensRegistry registry;
    registry.rot90 = RotationLens::create(host.config().feature_channels(),
                                          host.config().feature_channels(), 2, 90, rng);
    std::vector<int> idx = {0, 1, 2, 3};
    std::vector<TransformSpec> specs(4, TransformSpec::rotation(90));
    Tensor in = make_input_batch(ds, idx, host.config().input_h, host.config().input_w, &specs[0]);
    Tensor a = apply_lens_pipeline(host, registry, in, specs, LensSelect::TrueTransform);
    Tensor b = apply_lens_pipeline(host, registry, in, specs, LensSelect::TrueTransform);
    CHECK(std::vector<float>(a.data().begin(), a.data().end()) ==
          std::vector<float>(b.data().begin(), b.data().end()));
  }

  TEST_CASE("unresolved bins are an error") {
    FrozenHost host = quick_host(433);
    Dataset ds = make_synth_digits(4, 435, "t10k");
    LensRegistry registry;
    std::vector<int> idx = {0, 1};
    std::vector<TransformSpec> specs(2, TransformSpec::rotation(180));
    Tensor in = make_input_batch(ds, idx, host.config().input_h, host.config().input_w, &specs[0]);
    CHECK_THROWS_WITH_AS(apply_lens_pipeline(host, registry, in, specs,
                                             LensSelect::TrueTransform),
                         doctest::Contains("unresolved"), std::runtime_error);
  }
}

TEST_SUITE("lens training behavior") {
  TEST_CASE("labels are never read: permuting them changes nothing") {
    FrozenHost host = quick_host(437);
    Dataset ds = make_synth_digits(80, 439, "train");
    TrainConfig tc;
    tc.epochs = 1;
    tc.subset = 48;
    tc.batch_size = 16;
    tc.seed = 441;
    LensTrainResult a = train_lens(host, LensBin::Rot90, ds, tc, 2);
    Dataset permuted = ds;
    std::reverse(permuted.labels.begin(), permuted.labels.end());
    LensTrainResult b = train_lens(host, LensBin::Rot90, permuted, tc, 2);
    CHECK(param_checksum(a.lens.parameters()) == param_checksum(b.lens.parameters()));
    for (size_t i = 0; i < a.log.rows.size(); ++i)
      CHECK(a.log.rows[i].loss == b.log.rows[i].loss);
  }

  TEST_CASE("loss decreases on a small rot90 run") {
    FrozenHost host = freeze([] {
      // a lightly trained host so features carry structure
      Dataset ds = make_synth_digits(256, 443, "train");
      TrainConfig tc;
      tc.epochs = 2;
      tc.batch_size = 32;
      tc.seed = 445;
      return train_host(ds, tiny_host(), tc).model;
    }());
    Dataset ds = make_synth_digits(160, 447, "train");
    TrainConfig tc;
    tc.epochs = 6;
    tc.subset = 160;
    tc.batch_size = 32;
    tc.seed = 449;
    tc.loss = LossConfig{3, 0.2, LossMode::Tac};
    LensTrainResult r = train_lens(host, LensBin::Rot90, ds, tc, 2);
    CHECK(r.log.smoothed_loss_back(5) < 0.8 * r.log.smoothed_loss_front(5));
  }

  TEST_CASE("identity-like reconstruction on identity pairs has zero TAC loss") {
    // pass-through sanity: with the targets equal to the reconstruction the
    // loss is exactly zero at every step
    Rng rng(451);
    Tensor x = Tensor::randn({2, 3, 5, 5}, rng, 1.0);
    LossConfig cfg{3, 0.2, LossMode::Tac};
    CHECK(tac_loss(x, x.detach(), cfg).item() == 0.0f);
  }

  TEST_CASE("scaling lens: convex weights logged at every step, shapes recover") {
    FrozenHost host = quick_host(453);
    Dataset ds = make_synth_digits(64, 455, "train");
    TrainConfig tc;
    tc.epochs = 2;
    tc.subset = 48;
    tc.batch_size = 16;
    tc.seed = 457;
    for (double scale : {0.5, 1.0 / 3.0}) {
      ScalingLensTrainResult r = train_scaling_lens(host, scale, ds, tc, 2);
      CHECK(!r.weight_trace.empty());
      for (const auto& [w1, w2] : r.weight_trace) {
        CHECK(w1 > 0.0);
        CHECK(w1 < 1.0);
        CHECK(w1 + w2 == doctest::Approx(1.0).epsilon(1e-12));
      }
      // output shape equals the original feature shape
      const ContentWindow win = feature_content_window(host.config(), scale);
      Tensor x2 = Tensor::zeros({1, host.config().bottleneck_n, win.h, win.w});
      Tensor x0 = Tensor::zeros({1, host.config().shortcut_channels(), win.h, win.w});
      Tensor x3 = Tensor::zeros({1, host.config().feature_channels(), win.h, win.w});
      Tensor y = r.lens.forward(x2, x0, x3, host.config().feature_h(), host.config().feature_w());
      CHECK(y.shape() == Shape{1, host.config().feature_channels(), host.config().feature_h(),
                               host.config().feature_w()});
    }
  }
}

TEST_SUITE("xlayer") {
  TEST_CASE("zero-initialized block is an exact identity residual") {
    FrozenHost host = quick_host(461);
    XlayerBlock block = XlayerBlock::create(host.config().feature_channels(),
                                            host.config().bottleneck_n, 463);
    Dataset ds = make_synth_digits(16, 465, "t10k");
    std::vector<int> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    Tensor in = make_input_batch(ds, idx, host.config().input_h, host.config().input_w);
    auto out = host.forward_with_taps(in);
    Tensor through = host.head(block.forward(out.taps.block_out));
    CHECK(std::vector<float>(through.data().begin(), through.data().end()) ==
          std::vector<float>(out.logits.data().begin(), out.logits.data().end()));
  }

  TEST_CASE("training moves the block but not the host, and overfits a tiny set") {
    FrozenHost host = freeze([] {
      Dataset ds = make_synth_digits(512, 467, "train");
      TrainConfig tc;
      tc.epochs = 4;
      tc.batch_size = 32;
      tc.seed = 469;
      return train_host(ds, tiny_host(), tc).model;
    }());
    const uint64_t host_sum = host.checksum();
    Dataset ds = make_synth_digits(32, 471, "train");
    Dataset rotated = make_rotated_dataset(ds, 0, 0, 473);  // upright, labeled
    TrainConfig tc;
    tc.epochs = 200;  // the frozen pooled head passes only small gradients
    tc.batch_size = 16;
    tc.subset = 0;
    tc.initial_lr = 0.5;
    tc.decay_period_epochs = 100;
    tc.seed = 475;
    XlayerTrainResult r = train_xlayer(host, rotated, tc);
    CHECK(host.checksum() == host_sum);
    AccuracyReport rep = evaluate_accuracy(xlayer_predictor(host, r.block), rotated, EvalSpec{});
    CHECK(rep.accuracy == 1.0);
  }

  TEST_CASE("dataset without specs is rejected") {
    FrozenHost host = quick_host(477);
    Dataset ds = make_synth_digits(8, 479, "train");
    TrainConfig tc;
    CHECK_THROWS_WITH_AS(train_xlayer(host, ds, tc), doctest::Contains("transforms"),
                         std::runtime_error);
  }
}

TEST_SUITE("correlations") {
  TEST_CASE("identity transform correlates to exactly one") {
    FrozenHost host = quick_host(481);
    Dataset ds = make_synth_digits(24, 483, "t10k");
    CorrelationEntry e = feature_correlations(host, ds, TransformSpec::identity(), 24);
    CHECK(e.whole_feature_r == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(e.channel_mean_r == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(e.sample_count == 24);
    CHECK(e.skipped == 0);
  }

  TEST_CASE("rotations run through the dual and stay in [-1, 1]") {
    FrozenHost host = quick_host(487);
    Dataset ds = make_synth_digits(16, 489, "t10k");
    for (int angle : {90, 180, 270}) {
      CorrelationEntry e =
          feature_correlations(host, ds, TransformSpec::rotation(angle), 16);
      CHECK(e.whole_feature_r >= -1.0);
      CHECK(e.whole_feature_r <= 1.0);
      CHECK(e.channel_mean_r >= -1.0);
      CHECK(e.channel_mean_r <= 1.0);
    }
  }

  TEST_CASE("scaled features are upsampled from the content window") {
    FrozenHost host = quick_host(491);
    Dataset ds = make_synth_digits(12, 493, "t10k");
    CorrelationEntry e = feature_correlations(host, ds, TransformSpec::scaling(0.5), 12);
    CHECK(e.transform == "scale1/2");
    CHECK(e.whole_feature_r >= -1.0);
    CHECK(e.whole_feature_r <= 1.0);
  }
}
