#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "featlens/analysis.hpp"
#include "featlens/data.hpp"
#include "featlens/lens.hpp"
#include "featlens/loss.hpp"
#include "featlens/ops.hpp"

namespace py = pybind11;
using namespace featlens;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FArray& a) {
  py::buffer_info info = a.request();
  Shape shape;
  for (auto d : info.shape) shape.push_back(int(d));
  const float* p = static_cast<const float*>(info.ptr);
  return Tensor::from_data(std::move(shape), std::vector<float>(p, p + size_t(numel(shape))));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), static_cast<float*>(out.request().ptr));
  return out;
}

}  // namespace

PYBIND11_MODULE(_featlens, m) {
  m.doc() = "native kernels behind the feature-lens toolkit";

  m.def(
      "conv2d",
      [](const FArray& input, const FArray& kernel, const FArray& bias, int stride, int pad) {
        return to_array(conv2d(to_tensor(input), to_tensor(kernel), to_tensor(bias), stride, pad));
      },
      py::arg("input"), py::arg("kernel"), py::arg("bias"), py::arg("stride") = 1,
      py::arg("pad") = 0);

  m.def(
      "transposed_conv2d",
      [](const FArray& input, const FArray& kernel, int stride, int target_h, int target_w) {
        return to_array(
            transposed_conv2d(to_tensor(input), to_tensor(kernel), stride, target_h, target_w));
      },
      py::arg("input"), py::arg("kernel"), py::arg("stride"), py::arg("target_h"),
      py::arg("target_w"));

  m.def(
      "bilinear_resize",
      [](const FArray& input, int target_h, int target_w) {
        return to_array(bilinear_resize(to_tensor(input), target_h, target_w));
      },
      py::arg("input"), py::arg("target_h"), py::arg("target_w"));

  m.def(
      "dual_rotate_features",
      [](const FArray& f, int input_angle_deg) {
        return to_array(dual_rotate_features(to_tensor(f), input_angle_deg));
      },
      py::arg("features"), py::arg("input_angle_deg"));

  m.def(
      "self_attentive_sum",
      [](const std::vector<FArray>& groups) {
        std::vector<Tensor> g;
        g.reserve(groups.size());
        for (const auto& a : groups) g.push_back(to_tensor(a));
        return to_array(self_attentive_sum(g));
      },
      py::arg("groups"));

  m.def(
      "tac_loss",
      [](const FArray& target, const FArray& recon, int k, double d1) {
        return double(tac_loss(to_tensor(target), to_tensor(recon),
                               LossConfig{k, d1, LossMode::Tac})
                          .item());
      },
      py::arg("target"), py::arg("recon"), py::arg("k") = 3, py::arg("d1") = 0.2);

  m.def("mse_loss", [](const FArray& x, const FArray& y) {
    return double(mse_loss(to_tensor(x), to_tensor(y)).item());
  });
  m.def("mae_loss", [](const FArray& x, const FArray& y) {
    return double(mae_loss(to_tensor(x), to_tensor(y)).item());
  });

  m.def(
      "topk_locations",
      [](const FArray& map, int k) {
        Tensor t = to_tensor(map);
        TopKSelection sel = topk_locations(t, k);
        return py::make_tuple(sel.pos_locs, sel.neg_locs);
      },
      py::arg("map"), py::arg("k"), "row-major linear indices of (top-K, bottom-K) activations");

  m.def("pearson", [](const std::vector<double>& a, const std::vector<double>& b) {
    return pearson(std::span<const double>(a), std::span<const double>(b));
  });

  m.def(
      "regress_corr_accuracy",
      [](const std::vector<std::pair<double, double>>& points) {
        Regression r = regress_corr_accuracy(points);
        return py::make_tuple(r.slope, r.intercept, r.r);
      },
      py::arg("points"));

  m.def("bin_angle", [](double angle_deg) { return std::string(bin_name(bin_angle(angle_deg))); });

  m.def(
      "rotate_image",
      [](const FArray& img, double angle_deg) {
        py::buffer_info info = img.request();
        if (info.ndim != 2) throw std::runtime_error("rotate_image expects a 2-D array");
        const int h = int(info.shape[0]), w = int(info.shape[1]);
        const float* p = static_cast<const float*>(info.ptr);
        std::vector<float> out = apply_transform(std::vector<float>(p, p + size_t(h) * w), h, w,
                                                 TransformSpec::rotation(angle_deg));
        py::array_t<float> res({h, w});
        std::copy(out.begin(), out.end(), static_cast<float*>(res.request().ptr));
        return res;
      },
      py::arg("image"), py::arg("angle_deg"));
}
