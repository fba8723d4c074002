#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "featlens/artifacts.hpp"
#include "featlens/data.hpp"
#include "featlens/host_model.hpp"
#include "featlens/train.hpp"

using namespace featlens;

namespace {

// Reduced host for fast training-behavior tests.
HostConfig tiny_host() {
  HostConfig cfg;
  cfg.input_h = 28;
  cfg.input_w = 28;
  cfg.stage_widths = {8, 8, 16};
  cfg.bottleneck_n = 8;
  return cfg;
}

Tensor rand_batch(const HostConfig& cfg, int b, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(size_t(b) * cfg.input_channels * cfg.input_h * cfg.input_w);
  for (auto& x : v) x = float(rng.uniform());
  return Tensor::from_data({b, cfg.input_channels, cfg.input_h, cfg.input_w}, std::move(v));
}

}  // namespace

TEST_SUITE("host model") {
  TEST_CASE("default config shape trace") {
    HostConfig cfg;  // 56x56, N=64
    HostModel model(cfg, 1);
    Tensor batch = rand_batch(cfg, 2, 3);
    auto out = model.forward_with_taps(batch);
    // three stride-2 stages: 56 -> 28 -> 14 -> 7
    CHECK(out.taps.x0.shape() == Shape{2, 192, 7, 7});   // 3N shortcut
    CHECK(out.taps.x2.shape() == Shape{2, 64, 7, 7});    // N
    CHECK(out.taps.x3.shape() == Shape{2, 256, 7, 7});   // 4N
    CHECK(out.taps.block_out.shape() == Shape{2, 256, 7, 7});
    CHECK(out.logits.shape() == Shape{2, 10});
    CHECK(out.logits.all_finite());
    CHECK(out.taps.block_out.all_finite());
  }

  TEST_CASE("zero image still produces finite outputs") {
    HostConfig cfg = tiny_host();
    HostModel model(cfg, 5);
    Tensor zero = Tensor::zeros({1, 1, cfg.input_h, cfg.input_w});
    auto out = model.forward_with_taps(zero);
    CHECK(out.logits.all_finite());
    CHECK(out.taps.x0.all_finite());
  }

  TEST_CASE("same seed, bit-identical parameters; forward is deterministic") {
    HostConfig cfg = tiny_host();
    HostModel a(cfg, 42), b(cfg, 42), c(cfg, 43);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
    Tensor batch = rand_batch(cfg, 3, 7);
    auto o1 = a.forward_with_taps(batch);
    auto o2 = a.forward_with_taps(batch);
    CHECK(std::vector<float>(o1.logits.data().begin(), o1.logits.data().end()) ==
          std::vector<float>(o2.logits.data().begin(), o2.logits.data().end()));
  }

  TEST_CASE("logits are exactly the head applied to the block output") {
    HostConfig cfg = tiny_host();
    HostModel model(cfg, 11);
    Tensor batch = rand_batch(cfg, 2, 13);
    auto out = model.forward_with_taps(batch);
    Tensor recomputed = model.head(out.taps.block_out);
    CHECK(std::vector<float>(out.logits.data().begin(), out.logits.data().end()) ==
          std::vector<float>(recomputed.data().begin(), recomputed.data().end()));
  }

  TEST_CASE("spatial underflow is rejected") {
    HostConfig cfg = tiny_host();
    cfg.input_h = 8;  // 8 -> 4 -> 2 -> 1, below the 2x2 floor
    cfg.input_w = 8;
    CHECK_THROWS_WITH_AS(HostModel(cfg, 1), doctest::Contains("underflows"), std::runtime_error);
  }

  TEST_CASE("batch shape mismatch is rejected") {
    HostConfig cfg = tiny_host();
    HostModel model(cfg, 1);
    CHECK_THROWS(model.forward_with_taps(Tensor::zeros({1, 1, 14, 14})));
  }
}

TEST_SUITE("freeze") {
  TEST_CASE("frozen parameters never accumulate gradients") {
    HostConfig cfg = tiny_host();
    FrozenHost frozen = freeze(HostModel(cfg, 17));
    Tensor batch = rand_batch(cfg, 2, 19);
    auto out = frozen.forward_with_taps(batch);
    backward(sum(mul(out.logits, out.logits.detach())));
    for (const auto& [name, p] : frozen.named_parameters()) {
      (void)name;
      CHECK(!p.has_grad());
      CHECK(!p.requires_grad());
    }
    frozen.verify_unchanged();
  }

  TEST_CASE("lens training cannot move the host (checksum proof)") {
    HostConfig cfg = tiny_host();
    FrozenHost frozen = freeze(HostModel(cfg, 23));
    const uint64_t before = frozen.checksum();
    Dataset ds = make_synth_digits(96, 29, "train");
    TrainConfig tc;
    tc.epochs = 1;
    tc.subset = 64;
    tc.batch_size = 32;
    tc.seed = 31;
    train_lens(frozen, LensBin::Rot90, ds, tc, 2);
    CHECK(frozen.checksum() == before);
    frozen.verify_unchanged();
  }

  TEST_CASE("taps are bit-identical before and after lens training") {
    HostConfig cfg = tiny_host();
    FrozenHost frozen = freeze(HostModel(cfg, 37));
    Tensor batch = rand_batch(cfg, 2, 41);
    auto before = frozen.forward_with_taps(batch);
    std::vector<float> x_before(before.taps.block_out.data().begin(),
                                before.taps.block_out.data().end());
    Dataset ds = make_synth_digits(64, 43, "train");
    TrainConfig tc;
    tc.epochs = 1;
    tc.subset = 48;
    tc.batch_size = 16;
    tc.seed = 47;
    train_lens(frozen, LensBin::Rot180, ds, tc, 2);
    auto after = frozen.forward_with_taps(batch);
    CHECK(std::vector<float>(after.taps.block_out.data().begin(),
                             after.taps.block_out.data().end()) == x_before);
  }
}

TEST_SUITE("host training") {
  TEST_CASE("zero epochs leaves the initialization untouched") {
    HostConfig cfg = tiny_host();
    Dataset ds = make_synth_digits(64, 53, "train");
    TrainConfig tc;
    tc.epochs = 0;
    tc.seed = 59;
    HostTrainResult r = train_host(ds, cfg, tc);
    CHECK(r.model.checksum() == HostModel(cfg, tc.seed).checksum());
    CHECK(r.log.rows.empty());
  }

  TEST_CASE("fixed seed reproduces the loss curve bit for bit") {
    HostConfig cfg = tiny_host();
    Dataset ds = make_synth_digits(128, 61, "train");
    TrainConfig tc;
    tc.epochs = 2;
    tc.subset = 96;
    tc.batch_size = 32;
    tc.seed = 67;
    HostTrainResult a = train_host(ds, cfg, tc);
    HostTrainResult b = train_host(ds, cfg, tc);
    REQUIRE(a.log.rows.size() == b.log.rows.size());
    for (size_t i = 0; i < a.log.rows.size(); ++i)
      CHECK(a.log.rows[i].loss == b.log.rows[i].loss);
    CHECK(a.model.checksum() == b.model.checksum());
  }

  TEST_CASE("overfits a 32-sample subset within 200 steps") {
    HostConfig cfg = tiny_host();
    Dataset ds = make_synth_digits(32, 71, "train");
    TrainConfig tc;
    tc.epochs = 100;  // batch 16 -> 2 steps per epoch
    tc.batch_size = 16;
    tc.subset = 0;
    tc.initial_lr = 0.02;
    tc.lr_decay = 0.5;
    tc.decay_period_epochs = 40;
    tc.seed = 73;
    HostTrainResult r = train_host(ds, cfg, tc);
    FrozenHost frozen = freeze(std::move(r.model));
    std::vector<int> idx(32);
    for (int i = 0; i < 32; ++i) idx[size_t(i)] = i;
    Tensor in = make_input_batch(ds, idx, cfg.input_h, cfg.input_w);
    Tensor logits = frozen.forward_with_taps(in).logits;
    int correct = 0;
    for (int n = 0; n < 32; ++n) {
      int best = 0;
      for (int c = 1; c < 10; ++c)
        if (logits.at({n, c}) > logits.at({n, best})) best = c;
      correct += best == int(ds.labels[size_t(n)]);
    }
    CHECK(correct == 32);
  }

  TEST_CASE("divergence aborts with a diagnostic") {
    HostConfig cfg = tiny_host();
    Dataset ds = make_synth_digits(64, 79, "train");
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 32;
    tc.initial_lr = 1e5;  // guaranteed blow-up
    tc.seed = 83;
    CHECK_THROWS_WITH_AS(train_host(ds, cfg, tc), doctest::Contains("non-finite"),
                         std::runtime_error);
  }
}

TEST_SUITE("host checkpointing") {
  TEST_CASE("round trip preserves parameters and config") {
    HostConfig cfg = tiny_host();
    HostModel model(cfg, 89);
    const std::string path = "test_host_roundtrip.ckpt";
    save_host(model, path);
    HostModel loaded = load_host(path);
    CHECK(loaded.checksum() == model.checksum());
    CHECK(loaded.config().bottleneck_n == cfg.bottleneck_n);
    CHECK(loaded.config().input_h == cfg.input_h);
    std::remove(path.c_str());
  }
}
