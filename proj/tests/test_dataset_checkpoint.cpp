#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "tta/checkpoint.hpp"
#include "tta/dataset.hpp"
#include "tta/tensor_io.hpp"

using namespace tta;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("tta_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SyntheticTaskSpec small_spec() {
  SyntheticTaskSpec s;
  s.image_size = 16;
  s.n_train = 6;
  s.n_calib = 3;
  s.n_id_test = 4;
  s.n_ood_test = 4;
  return s;
}

bool same(const PairedDataset& a, const PairedDataset& b) {
  if (a.size() != b.size() || a.ids != b.ids) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a.inputs[i], b.inputs[i]) || !bitwise_equal(a.targets[i], b.targets[i])) return false;
  }
  return true;
}

double mean_abs_residual(const PairedDataset& d) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.inputs[i].size(); ++j, ++n) s += std::fabs(d.inputs[i][j] - d.targets[i][j]);
  }
  return s / static_cast<double>(n);
}

void truncate_file(const fs::path& p, std::uintmax_t keep) { fs::resize_file(p, keep); }

}  // namespace

TEST_CASE("synthetic dataset") {
  const SyntheticTaskSpec spec = small_spec();
  const SyntheticDataset a = generate_dataset(spec);
  CHECK(a.train.size() == 6);
  CHECK(a.calib.size() == 3);
  CHECK(a.id_test.size() == 4);
  CHECK(a.ood_test.size() == 4);
  CHECK(a.train.ids.front() == 0);
  CHECK(a.calib.ids.front() == 6);
  CHECK(a.id_test.ids.front() == 9);
  CHECK(a.ood_test.ids.back() == 16);
  for (const Tensor& t : a.train.targets) {
    CHECK(t.shape() == Shape{1, 16, 16});
    for (float v : t.data()) CHECK((v >= -0.9f && v <= 0.9f));
  }
  for (const Tensor& t : a.ood_test.inputs) {
    for (float v : t.data()) CHECK((v >= -1.0f && v <= 1.0f));
  }

  SUBCASE("deterministic in the seed") {
    const SyntheticDataset b = generate_dataset(spec);
    CHECK(same(a.train, b.train));
    CHECK(same(a.ood_test, b.ood_test));
    SyntheticTaskSpec other = spec;
    other.seed = 8;
    CHECK_FALSE(same(generate_dataset(other).train, a.train));
  }

  SUBCASE("noise shift") {
    SyntheticTaskSpec big = spec;
    big.n_id_test = big.n_ood_test = 16;
    const SyntheticDataset d = generate_dataset(big);
    const double id = mean_abs_residual(d.id_test);
    const double ood = mean_abs_residual(d.ood_test);
    // E|N(0, s)| = s sqrt(2/pi) before clipping.
    CHECK(id == doctest::Approx(0.2 * std::sqrt(2.0 / M_PI)).epsilon(0.1));
    CHECK(ood > 1.6 * id);
  }

  SUBCASE("noise-free acquisition is the identity") {
    Acquisition clean;
    clean.noise_sigma = 0.0;
    const Tensor x = clean_image(16, 3);
    CHECK(bitwise_equal(acquire(x, clean, 1), x));
  }

  SUBCASE("style targets are contrast remapped") {
    SyntheticTaskSpec st = spec;
    st.kind = TaskKind::Style;
    const SyntheticDataset s = generate_dataset(st);
    const float c = a.train.targets[0][0];
    const double expected = 2.0 * std::pow((c + 1.0) / 2.0, st.style_gamma) - 1.0;
    CHECK(s.train.targets[0][0] == doctest::Approx(expected).epsilon(1e-6));
    CHECK(bitwise_equal(s.train.inputs[0], a.train.inputs[0]));
  }

  SUBCASE("validation") {
    SyntheticTaskSpec bad = spec;
    bad.n_train = 0;
    CHECK_THROWS_AS(generate_dataset(bad), DomainError);
    bad = spec;
    bad.edge_softness = -1;
    CHECK_THROWS_AS(generate_dataset(bad), DomainError);
    CHECK_THROWS_AS(parse_task_kind("segment"), DomainError);
    CHECK(parse_task_kind(task_kind_name(TaskKind::Style)) == TaskKind::Style);
  }
}

TEST_CASE("dataset round trip") {
  TempDir tmp("dataset");
  const SyntheticTaskSpec spec = small_spec();
  const SyntheticDataset a = generate_dataset(spec);
  write_dataset(tmp.path, a, spec);
  const SyntheticDataset b = read_dataset(tmp.path);
  CHECK(same(a.train, b.train));
  CHECK(same(a.calib, b.calib));
  CHECK(same(a.id_test, b.id_test));
  CHECK(same(a.ood_test, b.ood_test));
  const SyntheticTaskSpec back = read_dataset_spec(tmp.path);
  CHECK(back.seed == spec.seed);
  CHECK(back.n_train == spec.n_train);
  CHECK(back.shift_noise_multiplier == spec.shift_noise_multiplier);

  SUBCASE("corrupted stack") {
    const fs::path p = tmp.path / "train_x.tnsr";
    auto bytes = read_file_bytes(p);
    bytes[bytes.size() - 1] ^= std::byte{0x40};
    write_file_bytes(p, bytes);
    CHECK_THROWS_AS(read_dataset(tmp.path), FormatError);
  }
  SUBCASE("truncated stack") {
    truncate_file(tmp.path / "calib_y.tnsr", 20);
    CHECK_THROWS_AS(read_dataset(tmp.path), FormatError);
  }
}

TEST_CASE("task model checkpoint") {
  TempDir tmp("task");
  TaskArch arch{5, 16, 1, 4};
  TaskModel m(arch, 21);
  m.set_trained(true);
  save_task_model(m, tmp.path, {77, 3});
  TrainingInfo info;
  const TaskModel back = load_task_model(tmp.path, &info);
  CHECK(back.arch() == arch);
  CHECK(back.checksum() == m.checksum());
  CHECK(back.trained());
  CHECK(info.seed == 77);
  CHECK(info.epochs == 3);

  SUBCASE("truncated blob") {
    truncate_file(tmp.path / "layer3.weight.tnsr", 10);
    CHECK_THROWS_AS(load_task_model(tmp.path), FormatError);
  }
  SUBCASE("flipped byte") {
    const fs::path p = tmp.path / "layer2.bias.tnsr";
    auto bytes = read_file_bytes(p);
    bytes.back() ^= std::byte{1};
    write_file_bytes(p, bytes);
    CHECK_THROWS_AS(load_task_model(tmp.path), FormatError);
  }
  SUBCASE("missing manifest") {
    fs::remove(tmp.path / "manifest.json");
    CHECK_THROWS_AS(load_task_model(tmp.path), FormatError);
  }
  SUBCASE("wrong kind") { CHECK_THROWS_AS(load_autoencoder(tmp.path), FormatError); }
}

TEST_CASE("reconstruction suite checkpoint") {
  TempDir tmp("suite");
  const TaskArch arch{7, 16, 1, 4};
  ReconSuite s(arch, 5);
  for (const std::string& n : s.member_names()) s.member(n).set_trained(true);
  save_recon_suite(s, tmp.path, {4, 2});
  const ReconSuite back = load_recon_suite(tmp.path, arch);
  CHECK(back.checksum() == s.checksum());
  CHECK(back.trained());
  CHECK(back.level(2).hidden_channels() == s.level(2).hidden_channels());
  CHECK_THROWS_AS(load_recon_suite(tmp.path, TaskArch{5, 16, 1, 4}), ArchitectureError);
  CHECK_THROWS_AS(load_recon_suite(tmp.path, TaskArch{7, 16, 1, 8}), ArchitectureError);

  const Autoencoder ae(3, 8, 2, 4, 1);
  save_autoencoder(ae, tmp.path / "single");
  const Autoencoder ae2 = load_autoencoder(tmp.path / "single");
  CHECK(ae2.hidden_channels() == 4);
  CHECK(ae2.bottleneck_channels() == 1);
  CHECK(ae2.checksum() == ae.checksum());
}
