// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <string>

#include "thermobnn/dataio.hpp"
#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

using namespace thermobnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("thermobnn_dataio_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ImageU16 ramp_image(std::size_t c, std::size_t h, std::size_t w, std::uint16_t base) {
  ImageU16 img(c, h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint16_t>((base + i) % 256);
  return img;
}

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.train = 1000;
  s.test = 500;
  s.height = s.width = 16;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("folder ingestion") {
  const fs::path root = scratch_dir("folder");
  fs::create_directories(root / "cat");
  fs::create_directories(root / "dog");
  write_netpbm(ramp_image(3, 4, 5, 0), 8, root / "cat" / "a.ppm");
  write_netpbm(ramp_image(3, 4, 5, 7), 8, root / "cat" / "b.ppm");
  write_netpbm(ramp_image(3, 4, 5, 9), 8, root / "dog" / "c.ppm");
  write_netpbm(ramp_image(3, 4, 5, 200), 8, root / "dog" / "d.ppm");
  {
    std::ofstream(root / "splits.txt") << "dog/d.ppm test\n";
  }
  const Dataset ds = load_dataset(root);
  CHECK(ds.size() == 4);
  CHECK(ds.num_classes == 2);
  CHECK(ds.channels == 3);
  CHECK(ds.labels == std::vector<std::uint32_t>{0, 0, 1, 1});
  CHECK(ds.indices(Split::test) == std::vector<std::size_t>{3});
  CHECK(ds.images[3] == ramp_image(3, 4, 5, 200));
  fs::remove_all(root);
}

TEST_CASE("netpbm round trip and malformed input") {
  const fs::path root = scratch_dir("pnm");
  const ImageU16 gray = ramp_image(1, 3, 6, 40);
  write_netpbm(gray, 8, root / "g.pgm");
  int bits = 0;
  CHECK(read_netpbm(root / "g.pgm", &bits) == gray);
  CHECK(bits == 8);
  {
    std::ofstream(root / "bad.pgm", std::ios::binary) << "P2\n3 3\n255\n";
  }
  CHECK_THROWS_AS(read_netpbm(root / "bad.pgm"), LoadError);
  fs::remove_all(root);
}

TEST_CASE("binary dataset format round trip and corrupt headers") {
  const Dataset ds = make_synthetic(small_spec(3));
  const auto bytes = dataset_to_bytes(ds);
  CHECK(dataset_from_bytes(bytes) == ds);

  auto broken = bytes;
  broken[1] = 'X';
  try {
    dataset_from_bytes(broken);
    FAIL("corrupt magic accepted");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("byte offset 0") != std::string::npos);
  }
  broken = bytes;
  broken[16] = 0xFF;  // count
  try {
    dataset_from_bytes(broken);
    FAIL("corrupt count accepted");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  broken = bytes;
  broken[36] = 200;  // first label beyond the class count
  try {
    dataset_from_bytes(broken);
    FAIL("label out of range accepted");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("record 0") != std::string::npos);
  }

  const fs::path root = scratch_dir("tbds");
  save_dataset(ds, root / "d.tbds");
  CHECK(io::read_file(root / "d.tbds") == bytes);
  CHECK(load_dataset(root / "d.tbds") == ds);
  fs::remove_all(root);
}

TEST_CASE("augmentation primitives") {
  const ImageU16 img = ramp_image(3, 10, 12, 5);
  CHECK(hflip(hflip(img)) == img);
  CHECK(hflip(img).at(1, 2, 0) == img.at(1, 2, 11));
  CHECK(pad_crop(img, 12, 12, 12, 10, 12) == img);
  const ImageU16 shifted = pad_crop(img, 2, 0, 0, 10, 12);
  CHECK(shifted.at(0, 0, 0) == 0);
  CHECK(shifted.at(0, 2, 2) == img.at(0, 0, 0));

  ImageU16 big(3, 96, 96, 7);
  cutout(big, 30, 40, 24);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t zeros = 0;
    for (std::size_t p = 0; p < 96 * 96; ++p) zeros += big.data[c * 96 * 96 + p] == 0 ? 1 : 0;
    CHECK(zeros == 576);
  }
  ImageU16 small(1, 8, 8);
  CHECK_THROWS_AS(cutout(small, 0, 0, 9), ConfigError);
  AugmentConfig cfg;
  cfg.cutout = 9;
  Rng rng(1, 1);
  CHECK_THROWS_AS(augment(small, cfg, rng), ConfigError);
}

TEST_CASE("augment keeps dimensions and range and is seed-deterministic") {
  const Dataset ds = make_synthetic(small_spec(4));
  AugmentConfig cfg;
  cfg.pad = 4;
  cfg.flip = true;
  cfg.cutout = 6;
  for (std::size_t i = 0; i < 50; ++i) {
    Rng a(9, i), b(9, i);
    const ImageU16 x = augment(ds.images[i], cfg, a);
    CHECK(x == augment(ds.images[i], cfg, b));
    CHECK(x.height == 16);
    CHECK(x.width == 16);
    for (auto v : x.data) REQUIRE(v <= 255);
  }
}

TEST_CASE("normalization and gamma") {
  ImageU16 img(1, 1, 3);
  img.data = {0, 255, 128};
  const ImageF f = normalize(img, 8, 2.2);
  CHECK(f.data[0] == 0.0F);
  CHECK(f.data[1] == 1.0F);
  CHECK(f.data[2] == doctest::Approx(std::pow(128.0 / 255.0, 2.2)).epsilon(1e-6));
}

TEST_CASE("synthetic data is deterministic and balanced") {
  const Dataset a = make_synthetic(small_spec(5)), b = make_synthetic(small_spec(5));
  CHECK(a == b);
  CHECK_FALSE(a == make_synthetic(small_spec(6)));
  CHECK_NOTHROW(a.validate());
  for (Split s : {Split::train, Split::test}) {
    std::vector<std::size_t> hist(a.num_classes, 0);
    for (auto i : a.indices(s)) ++hist[a.labels[i]];
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    CHECK(*hi - *lo <= 1);
  }
  CHECK(a.indices(Split::train).size() == 1000);
  CHECK(a.indices(Split::test).size() == 500);
}

TEST_CASE("a linear probe beats chance on the synthetic holdout") {
  const Dataset ds = make_synthetic(small_spec(7));
  const auto tr = ds.indices(Split::train), te = ds.indices(Split::test);
  const std::size_t d = ds.channels * ds.height * ds.width + 1;
  auto features = [&](std::size_t i) {
    Eigen::VectorXd f(static_cast<Eigen::Index>(d));
    const ImageF x = normalize(ds.images[i], ds.adc_bits);
    for (std::size_t k = 0; k + 1 < d; ++k) f(static_cast<Eigen::Index>(k)) = x.data[k];
    f(static_cast<Eigen::Index>(d - 1)) = 1.0;
    return f;
  };
  Eigen::MatrixXd x(static_cast<Eigen::Index>(tr.size()), static_cast<Eigen::Index>(d));
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tr.size()), static_cast<Eigen::Index>(ds.num_classes));
  for (std::size_t r = 0; r < tr.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = features(tr[r]).transpose();
    y(static_cast<Eigen::Index>(r), ds.labels[tr[r]]) = 1.0;
  }
  const Eigen::MatrixXd gram = x.transpose() * x + 1.0 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
  std::size_t correct = 0;
  for (auto i : te) {
    Eigen::Index k = 0;
    (features(i).transpose() * w).maxCoeff(&k);
    correct += static_cast<std::size_t>(k) == ds.labels[i] ? 1 : 0;
  }
  const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(te.size());
  MESSAGE("linear probe accuracy " << acc);
  CHECK(acc > 100.0 / static_cast<double>(ds.num_classes) + 5.0);
}
