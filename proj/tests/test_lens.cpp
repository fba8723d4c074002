#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "featlens/grad_check.hpp"
#include "featlens/lens.hpp"

using namespace featlens;

namespace {

Tensor rand_t(Shape shape, uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng, 1.0);
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// The forward rotation the input image received, expressed on feature grids.
Tensor forward_rotate(const Tensor& f, int angle) {
  return rotate_feature_quarters(f, angle / 90);
}

}  // namespace

TEST_SUITE("dual rotation") {
  TEST_CASE("2x2 hand example for a 90-degree input rotation") {
    // input rotated 90 ccw; the dual rotates the features 90 cw
    Tensor f = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});  // [[a,b],[c,d]]
    Tensor y = dual_rotate_features(f, 90);
    CHECK(values(y) == std::vector<float>{3, 1, 4, 2});  // [[c,a],[d,b]]
  }

  TEST_CASE("dual after forward recovers the features exactly") {
    for (int angle : {90, 180, 270}) {
      Tensor f = rand_t({2, 3, 7, 7}, 100 + uint64_t(angle));
      Tensor roundtrip = dual_rotate_features(forward_rotate(f, angle), angle);
      CHECK(values(roundtrip) == values(f));
    }
    // 180 also works on rectangular maps
    Tensor f = rand_t({1, 2, 3, 5}, 7);
    CHECK(values(dual_rotate_features(forward_rotate(f, 180), 180)) == values(f));
  }

  TEST_CASE("unbinned angles and non-square maps are rejected") {
    Tensor f = rand_t({1, 1, 2, 3}, 9);
    CHECK_THROWS_WITH_AS(dual_rotate_features(f, 45), doctest::Contains("unbinned"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(dual_rotate_features(f, 90), doctest::Contains("square"),
                         std::runtime_error);
  }

  TEST_CASE("rotation is differentiable (pure permutation)") {
    Rng rng(33);
    DTensor f = DTensor::randn({1, 2, 3, 3}, rng, 1.0);
    DTensor w = DTensor::randn({1, 2, 3, 3}, rng, 1.0);
    const double err = grad_check(
        [&](const DTensor& p) { return sum(mul(dual_rotate_features(p, 90), w)); }, f);
    CHECK(err < 1e-9);
  }
}

TEST_SUITE("self_attentive_sum") {
  TEST_CASE("single group passes through bitwise") {
    Tensor g = rand_t({1, 4, 3, 3}, 41);
    CHECK(values(self_attentive_sum<float>({g})) == values(g));
  }

  TEST_CASE("equal groups return the common value") {
    Tensor g = Tensor::filled({1, 2, 2, 2}, 1.75f);
    Tensor y = self_attentive_sum<float>({g, g.detach(), g.detach()});
    for (float v : y.data()) CHECK(v == doctest::Approx(1.75f).epsilon(1e-6));
  }

  TEST_CASE("two-group scalar example") {
    Tensor a = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    Tensor b = Tensor::from_data({1, 1, 1, 1}, {0.0f});
    // softmax(1,0) = (e/(e+1), 1/(e+1))
    const double e = std::exp(1.0);
    CHECK(self_attentive_sum<float>({a, b}).data()[0] ==
          doctest::Approx(e / (e + 1.0)).epsilon(1e-6));
  }

  TEST_CASE("output is a convex combination and order-invariant") {
    std::vector<Tensor> groups;
    for (uint64_t s = 0; s < 4; ++s) groups.push_back(rand_t({2, 3, 4, 4}, 50 + s));
    Tensor y = self_attentive_sum(groups);
    for (int64_t i = 0; i < y.size(); ++i) {
      float lo = 1e9f, hi = -1e9f;
      for (const auto& g : groups) {
        lo = std::min(lo, g.data()[size_t(i)]);
        hi = std::max(hi, g.data()[size_t(i)]);
      }
      CHECK(y.data()[size_t(i)] >= lo - 1e-5f);
      CHECK(y.data()[size_t(i)] <= hi + 1e-5f);
    }
    std::vector<Tensor> shuffled = {groups[2], groups[0], groups[3], groups[1]};
    Tensor y2 = self_attentive_sum(shuffled);
    for (int64_t i = 0; i < y.size(); ++i)
      CHECK(y.data()[size_t(i)] == doctest::Approx(y2.data()[size_t(i)]).epsilon(1e-6));
  }

  TEST_CASE("rejects empty and mismatched groups") {
    CHECK_THROWS(self_attentive_sum<float>({}));
    CHECK_THROWS(self_attentive_sum<float>({rand_t({1, 1, 2, 2}, 1), rand_t({1, 1, 3, 3}, 2)}));
  }

  TEST_CASE("gradient matches central differences") {
    Rng rng(61);
    DTensor a = DTensor::randn({1, 2, 3, 3}, rng, 1.0);
    DTensor b = DTensor::randn({1, 2, 3, 3}, rng, 1.0);
    DTensor w = DTensor::randn({1, 2, 3, 3}, rng, 1.0);
    const double err = grad_check(
        [&](const DTensor& p) {
          return sum(mul(self_attentive_sum<double>({p, b}), w));
        },
        a);
    CHECK(err < 1e-3);
  }
}

TEST_SUITE("multigroup_conv") {
  TEST_CASE("identity kernel with one group") {
    const int c = 4;
    std::vector<float> eye(size_t(c) * c, 0.0f);
    for (int i = 0; i < c; ++i) eye[size_t(i) * c + i] = 1.0f;
    Tensor x = rand_t({1, c, 3, 3}, 71);
    auto groups = multigroup_conv(x, Tensor::from_data({c, c, 1, 1}, eye), Tensor::zeros({c}), 1);
    REQUIRE(groups.size() == 1);
    CHECK(values(groups[0]) == values(x));
  }

  TEST_CASE("group linearity: doubled kernels double the group") {
    const int c = 3;
    Tensor x = rand_t({1, c, 2, 2}, 73);
    std::vector<float> k1(size_t(c) * c);
    Rng rng(75);
    for (auto& v : k1) v = float(rng.normal());
    std::vector<float> k2 = k1;
    k2.insert(k2.end(), k1.begin(), k1.end());
    for (size_t i = k1.size(); i < k2.size(); ++i) k2[i] *= 2.0f;
    auto groups = multigroup_conv(x, Tensor::from_data({2 * c, c, 1, 1}, k2),
                                  Tensor::zeros({2 * c}), 2);
    REQUIRE(groups.size() == 2);
    for (int64_t i = 0; i < groups[0].size(); ++i)
      CHECK(groups[1].data()[size_t(i)] ==
            doctest::Approx(2.0f * groups[0].data()[size_t(i)]).epsilon(1e-5));
  }

  TEST_CASE("shape contract at desk scale") {
    // N=64: three groups of 4N=256 channels on a 7x7 grid
    const int in_c = 256, out_c = 256, m = 3;
    Tensor x = rand_t({1, in_c, 7, 7}, 77);
    Rng rng(79);
    Tensor k = Tensor::randn({m * out_c, in_c, 1, 1}, rng, 0.05);
    auto groups = multigroup_conv(x, k, Tensor::zeros({m * out_c}), m);
    REQUIRE(groups.size() == 3);
    for (const auto& g : groups) CHECK(g.shape() == Shape{1, out_c, 7, 7});
  }
}

TEST_SUITE("rotation lens") {
  TEST_CASE("lens input is the 4N concatenation of x2 and x0") {
    const int n = 8;  // N
    Rng rng(81);
    RotationLens lens = RotationLens::create(4 * n, 4 * n, 2, 90, rng);
    Tensor x2 = rand_t({1, n, 4, 4}, 83);      // N channels
    Tensor x0 = rand_t({1, 3 * n, 4, 4}, 85);  // 3N channels
    Tensor y = lens.forward(x2, x0);
    CHECK(y.shape() == Shape{1, 4 * n, 4, 4});
    // wrong channel split is rejected
    Tensor bad = rand_t({1, 2 * n, 4, 4}, 87);
    CHECK_THROWS_WITH_AS(lens.forward(x2, bad), doctest::Contains("input channels"),
                         std::runtime_error);
  }

  TEST_CASE("M=1 identity kernel reduces to the dual-rotated concat") {
    const int c = 8;  // 4N with N=2
    std::vector<float> eye(size_t(c) * c, 0.0f);
    for (int i = 0; i < c; ++i) eye[size_t(i) * c + i] = 1.0f;
    RotationLens lens;
    lens.groups = 1;
    lens.input_angle = 90;
    lens.kernel = Tensor::from_data({c, c, 1, 1}, eye, true);
    lens.bias = Tensor::zeros({c}, true);
    Tensor x2 = rand_t({2, 2, 5, 5}, 91);
    Tensor x0 = rand_t({2, 6, 5, 5}, 93);
    Tensor expect = dual_rotate_features(concat_channels<float>({x2, x0}), 90);
    CHECK(values(lens.forward(x2, x0)) == values(expect));
  }

  TEST_CASE("all-equal multigroup kernels match the M=1 case") {
    const int c = 8;
    Rng rng(95);
    std::vector<float> k1(size_t(c) * c);
    for (auto& v : k1) v = float(rng.normal() * 0.2);
    std::vector<float> k4;
    for (int m = 0; m < 4; ++m) k4.insert(k4.end(), k1.begin(), k1.end());

    RotationLens lens1;  // M=1
    lens1.groups = 1;
    lens1.input_angle = 180;
    lens1.kernel = Tensor::from_data({c, c, 1, 1}, k1, true);
    lens1.bias = Tensor::zeros({c}, true);
    RotationLens lens4;
    lens4.groups = 4;
    lens4.input_angle = 180;
    lens4.kernel = Tensor::from_data({4 * c, c, 1, 1}, k4, true);
    lens4.bias = Tensor::zeros({4 * c}, true);

    Tensor x2 = rand_t({1, 2, 3, 3}, 97);
    Tensor x0 = rand_t({1, 6, 3, 3}, 99);
    Tensor y1 = lens1.forward(x2, x0);
    Tensor y4 = lens4.forward(x2, x0);
    for (int64_t i = 0; i < y1.size(); ++i)
      CHECK(y4.data()[size_t(i)] == doctest::Approx(y1.data()[size_t(i)]).epsilon(1e-5));
  }
}

TEST_SUITE("scaling lens") {
  TEST_CASE("w1 -> 1 leaves only the transposed-conv branch") {
    Rng rng(101);
    ScalingLens lens = ScalingLens::create(16, 16, 2, 2, 3, rng);
    lens.alpha.mutable_data()[0] = 40.0f;  // logistic saturates to 1 in float
    Tensor x2 = rand_t({1, 4, 4, 4}, 103);
    Tensor x0 = rand_t({1, 12, 4, 4}, 105);
    Tensor x3 = rand_t({1, 16, 4, 4}, 107);
    Tensor y = lens.forward(x2, x0, x3, 7, 7);
    Tensor branch =
        transposed_conv2d(lens.embedded.forward(x2, x0), lens.tconv_kernel, 2, 7, 7);
    CHECK(values(y) == values(branch));
    CHECK(lens.w1() == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("constant residual with a zero embedded branch mixes exactly") {
    const int c = 8;
    Rng rng(109);
    ScalingLens lens = ScalingLens::create(c, c, 2, 2, 3, rng);
    // zero the embedded lens and the transposed conv: branch is exactly zero
    for (auto& p : {lens.embedded.kernel, lens.embedded.bias, lens.tconv_kernel}) {
      Tensor t = p;
      auto d = t.mutable_data();
      std::fill(d.begin(), d.end(), 0.0f);
    }
    lens.alpha.mutable_data()[0] = 0.0f;  // w1 = w2 = 0.5
    const float c_val = 3.25f;
    Tensor x2 = rand_t({1, 2, 4, 4}, 111);
    Tensor x0 = rand_t({1, 6, 4, 4}, 113);
    Tensor x3 = Tensor::filled({1, c, 4, 4}, c_val);
    Tensor y = lens.forward(x2, x0, x3, 7, 7);
    CHECK(y.shape() == Shape{1, c, 7, 7});
    for (float v : y.data()) CHECK(v == 0.5f * c_val);
    CHECK(lens.w1() == doctest::Approx(0.5));
    CHECK(lens.w2() == doctest::Approx(0.5));
  }

  TEST_CASE("mixing weights stay a convex pair") {
    Rng rng(115);
    ScalingLens lens = ScalingLens::create(8, 8, 1, 3, 3, rng);
    for (float a : {-5.0f, -1.0f, 0.0f, 2.5f, 7.0f}) {
      lens.alpha.mutable_data()[0] = a;
      CHECK(lens.w1() > 0.0);
      CHECK(lens.w1() < 1.0);
      CHECK(lens.w1() + lens.w2() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("upscaling only: target below the scaled maps is rejected") {
    Rng rng(117);
    ScalingLens lens = ScalingLens::create(8, 8, 1, 2, 3, rng);
    Tensor x2 = rand_t({1, 2, 4, 4}, 119);
    Tensor x0 = rand_t({1, 6, 4, 4}, 121);
    Tensor x3 = rand_t({1, 8, 4, 4}, 123);
    CHECK_THROWS_WITH_AS(lens.forward(x2, x0, x3, 3, 3), doctest::Contains("smaller"),
                         std::runtime_error);
  }
}

TEST_SUITE("binning and registry") {
  TEST_CASE("angle intervals") {
    CHECK(bin_angle(30) == LensBin::Identity);   // [-45, 45)
    CHECK(bin_angle(100) == LensBin::Rot90);     // [45, 135)
    CHECK(bin_angle(350) == LensBin::Identity);  // == -10
    CHECK(bin_angle(45) == LensBin::Rot90);
    CHECK(bin_angle(135) == LensBin::Rot180);
    CHECK(bin_angle(224.999) == LensBin::Rot180);
    CHECK(bin_angle(225) == LensBin::Rot270);
    CHECK(bin_angle(315) == LensBin::Identity);
    CHECK(bin_angle(-90) == LensBin::Rot270);
    CHECK(bin_angle(360 * 3 + 90) == LensBin::Rot90);
  }

  TEST_CASE("registry covers identity implicitly, errors on missing bins") {
    LensRegistry reg;
    CHECK(reg.covers(LensBin::Identity));
    CHECK(!reg.covers(LensBin::Rot90));
    CHECK_THROWS_WITH_AS(reg.rotation_for(LensBin::Rot90), doctest::Contains("unresolved"),
                         std::runtime_error);
    CHECK_THROWS_AS(reg.rotation_for(LensBin::Identity), std::runtime_error);
    Rng rng(131);
    reg.rot90 = RotationLens::create(8, 8, 1, 90, rng);
    CHECK(reg.covers(LensBin::Rot90));
  }

  TEST_CASE("content window matches the canvas geometry") {
    HostConfig cfg;
    cfg.validate();
    // 56x56 canvas, stride 8, 7x7 features: half-scale content sits on a 4x4
    // window, third-scale on 2x2
    ContentWindow half = feature_content_window(cfg, 0.5);
    CHECK(half.h == 4);
    CHECK(half.w == 4);
    CHECK(half.y0 == 2);
    ContentWindow third = feature_content_window(cfg, 1.0 / 3.0);
    CHECK(third.h == 2);
    CHECK(third.w == 2);
  }
}

TEST_SUITE("rotation classifier") {
  TEST_CASE("zero weights give uniform probabilities") {
    RotationClassifier clf = RotationClassifier::zeros(16);
    Taps taps;
    taps.x2 = rand_t({3, 4, 5, 5}, 141);
    taps.x0 = rand_t({3, 12, 5, 5}, 143);
    auto preds = predict_rotation(taps, clf);
    REQUIRE(preds.size() == 3);
    for (const auto& p : preds) {
      double total = 0.0;
      for (float v : p.probs) {
        CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  TEST_CASE("probabilities always sum to one") {
    Rng rng(151);
    RotationClassifier clf = RotationClassifier::zeros(16);
    for (auto& t : clf.parameters()) {
      auto d = t.mutable_data();
      for (auto& v : d) v = float(rng.normal());
    }
    Taps taps;
    taps.x2 = rand_t({4, 4, 3, 3}, 153);
    taps.x0 = rand_t({4, 12, 3, 3}, 155);
    for (const auto& p : predict_rotation(taps, clf)) {
      double total = 0.0;
      for (float v : p.probs) total += v;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  TEST_CASE("linearly separable clusters reach full accuracy") {
    // four well-separated pooled-feature clusters, one per bin
    const int dim = 8;
    Rng rng(161);
    std::vector<Tensor> centers;
    for (int c = 0; c < 4; ++c) centers.push_back(rand_t({dim}, 163 + uint64_t(c) * 2));
    auto sample = [&](int c, uint64_t seed) {
      Rng r(seed);
      std::vector<float> v(dim);
      for (int i = 0; i < dim; ++i)
        v[size_t(i)] = centers[size_t(c)].data()[size_t(i)] * 10.0f + float(r.normal() * 0.1);
      return v;
    };
    RotationClassifier clf = RotationClassifier::zeros(dim);
    SgdT<float> opt(clf.parameters());
    for (int step = 0; step < 200; ++step) {
      std::vector<float> batch;
      std::vector<int> labels;
      for (int c = 0; c < 4; ++c) {
        auto v = sample(c, 1000 + uint64_t(step) * 4 + uint64_t(c));
        batch.insert(batch.end(), v.begin(), v.end());
        labels.push_back(c);
      }
      Tensor x = Tensor::from_data({4, dim}, batch);
      Tensor loss = cross_entropy(fully_connected(x, clf.weight, clf.bias), labels);
      backward(loss);
      opt.step(0.05, 0.9);
    }
    int correct = 0;
    for (int c = 0; c < 4; ++c)
      for (int trial = 0; trial < 25; ++trial) {
        Tensor x = Tensor::from_data({1, dim}, sample(c, 5000 + uint64_t(c) * 25 + trial));
        Tensor logits = fully_connected(x, clf.weight, clf.bias);
        int best = 0;
        for (int i = 1; i < 4; ++i)
          if (logits.data()[size_t(i)] > logits.data()[size_t(best)]) best = i;
        correct += best == c;
      }
    CHECK(correct == 100);
  }
}
