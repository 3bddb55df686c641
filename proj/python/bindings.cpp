// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "thermobnn/adcsim.hpp"
#include "thermobnn/bitcore.hpp"
#include "thermobnn/checkpoint.hpp"
#include "thermobnn/encoders.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/experiment.hpp"
#include "thermobnn/topology.hpp"
#include "thermobnn/train.hpp"

namespace py = pybind11;
using namespace thermobnn;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

Shape shape_of(const py::array& a) { return Shape(a.shape(), a.shape() + a.ndim()); }

BitTensor to_bits(const Array<std::int8_t>& a, BitSemantics sem) {
  return BitTensor::from_values(shape_of(a), std::span<const std::int8_t>(a.data(), a.size()), sem);
}

py::array_t<std::int32_t> to_numpy(const IntTensor& t) {
  py::array_t<std::int32_t> out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Logits to_logits(const Array<double>& a) {
  if (a.ndim() != 2) throw DimensionError("logits must be a 2-d array");
  Logits l(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), l.v.begin());
  return l;
}

ImageF to_image(const Array<float>& a) {
  if (a.ndim() != 3) throw DimensionError("image must be a (C, H, W) array");
  ImageF img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
             static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

py::array_t<std::uint8_t> planes_to_numpy(const EncodedPlanes& e) {
  const auto& s = e.planes.shape();
  py::array_t<std::uint8_t> out({s[0], s[1], s[2]});
  const auto bits = e.planes.unpack();
  std::copy(bits.begin(), bits.end(), out.mutable_data());
  return out;
}

py::dict size_dict(const NetConfig& cfg) {
  const SizeReport s = count_model_size(cfg);
  py::dict d;
  d["binary_weight_bits"] = s.binary_weight_bits;
  d["batchnorm_bits"] = s.batchnorm_bits;
  d["encoder_bits"] = s.encoder_bits;
  d["size_bits"] = s.total_bits();
  d["bops"] = count_bops(cfg).total;
  return d;
}

EncodingKind encoding_of(const std::string& name) {
  if (name == "glt") return EncodingKind::glt;
  if (name == "ft") return EncodingKind::fixed_thermometer;
  if (name == "base2") return EncodingKind::base2;
  throw ConfigError("unknown encoder kind '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary network kernels, thermometer encoders and trained-model access";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // kernels
  m.def(
      "xnor_dot",
      [](const Array<std::int8_t>& a, const Array<std::int8_t>& b) {
        return xnor_dot(to_bits(a, BitSemantics::signed_pm1), to_bits(b, BitSemantics::signed_pm1));
      },
      py::arg("a"), py::arg("b"), "Dot product of two +-1 vectors via XNOR and popcount.");
  m.def(
      "popcount_linear",
      [](const Array<std::int8_t>& x, const Array<std::int8_t>& w) {
        return to_numpy(popcount_linear(to_bits(x, BitSemantics::signed_pm1), to_bits(w, BitSemantics::signed_pm1)));
      },
      py::arg("x"), py::arg("w"));
  m.def(
      "bin_conv2d",
      [](const Array<std::int8_t>& x, const Array<std::int8_t>& w, std::size_t stride, std::size_t padding,
         std::size_t groups, bool planes) {
        const auto sem = planes ? BitSemantics::plane01 : BitSemantics::signed_pm1;
        return to_numpy(bin_conv2d(to_bits(x, sem), to_bits(w, BitSemantics::signed_pm1),
                                   ConvParams{stride, padding, groups}));
      },
      py::arg("x"), py::arg("w"), py::arg("stride") = 1, py::arg("padding") = 0, py::arg("groups") = 1,
      py::arg("planes") = false, "Grouped binary cross-correlation; `planes` marks 0/1 inputs.");

  // encoders
  m.def("thresholds_from_latent", [](std::vector<double> lat) { return thresholds_from_latent(lat); },
        py::arg("latent"));
  m.def("threshold_jacobian", [](std::vector<double> lat) { return threshold_jacobian(lat); }, py::arg("latent"));
  m.def(
      "glt_init", [](std::size_t planes, int adc_bits) { return glt_init(planes, adc_bits); }, py::arg("planes"),
      py::arg("adc_bits") = 8);
  m.def("linear_ramp", &linear_ramp, py::arg("planes"), py::arg("adc_bits") = 8);
  m.def(
      "quantize_thresholds",
      [](std::vector<double> t, int adc_bits) { return quantize_thresholds(t, adc_bits); }, py::arg("thresholds"),
      py::arg("adc_bits") = 8);
  m.def(
      "surrogate_grad",
      [](double u, double p, double mm) {
        SurrogateConfig c;
        c.p = p;
        c.m = mm;
        c.validate();
        return surrogate_grad(u, c);
      },
      py::arg("u"), py::arg("p") = 2.0, py::arg("m") = 5.0);
  m.def(
      "encode_thermometer",
      [](const Array<float>& image, const std::vector<std::vector<double>>& thresholds) {
        return planes_to_numpy(encode_thermometer(to_image(image), thresholds));
      },
      py::arg("image"), py::arg("thresholds"), "Bit planes (C*M, H, W), channel-major.");
  m.def(
      "distributional_loss",
      [](const Array<double>& teacher, const Array<double>& student, double temperature) {
        return distributional_loss(to_logits(teacher), to_logits(student), temperature);
      },
      py::arg("teacher"), py::arg("student"), py::arg("temperature") = 8.0);

  // ADC
  py::class_<RampADC>(m, "RampADC")
      .def(py::init([](int bits, std::vector<std::uint32_t> codes) { return RampADC(bits, std::move(codes)); }),
           py::arg("bits"), py::arg("codes"))
      .def("convert_pixel", [](const RampADC& a, double v) { return a.convert_pixel(v); }, py::arg("value"));

  // topology
  m.def(
      "model_size",
      [](const std::string& preset, const std::string& encoder, std::size_t planes, std::size_t size) {
        return size_dict(preset_config(preset, EncoderSpec{encoding_of(encoder), planes, 8}, size, size));
      },
      py::arg("preset") = "toy11", py::arg("encoder") = "glt", py::arg("planes") = 8, py::arg("size") = 32,
      "Size (bits) and BOPs of a preset network.");

  // checkpoints
  py::class_<Model>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& p) { return restore(load_checkpoint(p)); }, py::arg("path"))
      .def_property_readonly("mode", [](const Model& md) { return to_string(md.mode()); })
      .def_property_readonly("config_json", [](const Model& md) { return net_config_to_json(md.config()); })
      .def_property_readonly("thresholds", &Model::encoder_thresholds)
      .def("size", [](const Model& md) { return size_dict(md.config()); })
      .def(
          "predict",
          [](const Model& md, const Array<float>& images) {
            if (images.ndim() != 4) throw DimensionError("images must be an (N, C, H, W) array");
            std::vector<ImageF> batch;
            const auto per = static_cast<std::size_t>(images.shape(1) * images.shape(2) * images.shape(3));
            for (py::ssize_t i = 0; i < images.shape(0); ++i) {
              ImageF img(static_cast<std::size_t>(images.shape(1)), static_cast<std::size_t>(images.shape(2)),
                         static_cast<std::size_t>(images.shape(3)));
              std::copy_n(images.data() + static_cast<std::size_t>(i) * per, per, img.data.begin());
              batch.push_back(std::move(img));
            }
            const Logits l = md.infer(batch);
            py::array_t<double> out({l.n, l.classes});
            std::copy(l.v.begin(), l.v.end(), out.mutable_data());
            return out;
          },
          py::arg("images"), "Logits for normalized images in [0, 1].")
      .def(
          "evaluate",
          [](const Model& md, const std::filesystem::path& data, double gamma) {
            return evaluate(md, load_dataset(data), Split::test, gamma);
          },
          py::arg("data"), py::arg("gamma") = 1.0, "Test accuracy in percent.");

  m.def(
      "synthetic_dataset",
      [](std::size_t classes, std::size_t train, std::size_t test, std::size_t size, std::uint64_t seed,
         const std::filesystem::path& out) {
        SyntheticSpec s;
        s.classes = classes;
        s.train = train;
        s.test = test;
        s.height = s.width = size;
        s.seed = seed;
        save_dataset(make_synthetic(s), out);
      },
      py::arg("classes") = 10, py::arg("train") = 5000, py::arg("test") = 1000, py::arg("size") = 32,
      py::arg("seed") = 1, py::arg("out"));
}
