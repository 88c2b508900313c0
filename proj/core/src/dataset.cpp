#include "tta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "serialize.hpp"
#include "tta/rng.hpp"
#include "tta/tensor_io.hpp"

namespace tta {

std::string_view task_kind_name(TaskKind kind) { return kind == TaskKind::Denoise ? "denoise" : "style"; }

TaskKind parse_task_kind(std::string_view name) {
  if (name == "denoise") return TaskKind::Denoise;
  if (name == "style") return TaskKind::Style;
  throw DomainError("unknown task kind '" + std::string(name) + "'");
}

Acquisition SyntheticTaskSpec::shifted() const {
  Acquisition a = acquisition;
  a.noise_sigma *= shift_noise_multiplier;
  a.gamma = shift_gamma;
  a.blur_radius = shift_blur_radius;
  return a;
}

void SyntheticTaskSpec::validate() const {
  if (image_size < 8) throw DomainError("image size must be at least 8");
  if (n_train < 1) throw DomainError("training split must not be empty");
  if (n_calib < 0 || n_id_test < 0 || n_ood_test < 0) throw DomainError("split sizes must be non-negative");
  if (acquisition.noise_sigma < 0 || shift_noise_multiplier < 0) throw DomainError("noise must be non-negative");
  if (!(acquisition.gamma > 0) || !(shift_gamma > 0) || !(style_gamma > 0)) {
    throw DomainError("gamma values must be positive");
  }
  if (acquisition.blur_radius < 0 || shift_blur_radius < 0 || edge_softness < 0) throw DomainError("blur radius must be non-negative");
}

namespace {
Tensor gaussian_blur(const Tensor& img, double sigma);
}  // namespace

Tensor clean_image(int size, std::uint64_t seed, double edge_softness) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  auto sign = [&] { return u(rng) < 0.5 ? -1.0 : 1.0; };
  const double s = size;
  std::vector<double> img(static_cast<std::size_t>(size * size), range(-0.6, -0.2));
  const int blobs = 3 + static_cast<int>(u(rng) * 4);
  for (int b = 0; b < blobs; ++b) {
    const double cx = range(0, s), cy = range(0, s), sigma = range(0.1, 0.2) * s;
    const double amp = sign() * range(0.4, 1.0);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        img[static_cast<std::size_t>(y * size + x)] += amp * std::exp(-r2 / (2 * sigma * sigma));
      }
    }
  }
  const int rects = 1 + static_cast<int>(u(rng) * 3);
  for (int r = 0; r < rects; ++r) {
    const int w = static_cast<int>(range(0.15, 0.45) * s), h = static_cast<int>(range(0.15, 0.45) * s);
    const int x0 = static_cast<int>(range(0, s - w)), y0 = static_cast<int>(range(0, s - h));
    const double amp = sign() * range(0.4, 0.6);
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) img[static_cast<std::size_t>(y * size + x)] += amp;
    }
  }
  Tensor out({1, size, size});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], -0.9, 0.9));
  return edge_softness > 0 ? gaussian_blur(out, edge_softness) : out;
}

namespace {

Tensor gaussian_blur(const Tensor& img, double sigma) {
  const int half = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double total = 0;
  for (int i = -half; i <= half; ++i) total += k[static_cast<std::size_t>(i + half)] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= total;
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor tmp(img.shape()), out(img.shape());
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -half; i <= half; ++i) acc += k[static_cast<std::size_t>(i + half)] * img.at(ch, y, clampi(x + i, w));
        tmp.at(ch, y, x) = static_cast<float>(acc);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -half; i <= half; ++i) acc += k[static_cast<std::size_t>(i + half)] * tmp.at(ch, clampi(y + i, h), x);
        out.at(ch, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

float gamma_remap(float v, double gamma) {
  const double unit = std::clamp((static_cast<double>(v) + 1.0) / 2.0, 0.0, 1.0);
  return static_cast<float>(2.0 * std::pow(unit, gamma) - 1.0);
}

}  // namespace

Tensor acquire(const Tensor& clean, const Acquisition& acq, std::uint64_t seed) {
  Tensor x = acq.blur_radius > 0 ? gaussian_blur(clean, acq.blur_radius) : clean;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (float& v : x.data()) {
    const double g = acq.gamma == 1.0 ? v : gamma_remap(v, acq.gamma);
    v = static_cast<float>(std::clamp(g + acq.noise_sigma * noise(rng), -1.0, 1.0));
  }
  return x;
}

SyntheticDataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  int next_id = 0;
  auto fill = [&](PairedDataset& split, int count, const Acquisition& acq) {
    for (int i = 0; i < count; ++i, ++next_id) {
      const auto id = static_cast<std::uint64_t>(next_id);
      Tensor clean = clean_image(spec.image_size, derive_seed(spec.seed, {id, 0}), spec.edge_softness);
      split.inputs.push_back(acquire(clean, acq, derive_seed(spec.seed, {id, 1})));
      if (spec.kind == TaskKind::Style) {
        for (float& v : clean.data()) v = gamma_remap(v, spec.style_gamma);
      }
      split.targets.push_back(std::move(clean));
      split.ids.push_back(next_id);
    }
  };
  fill(ds.train, spec.n_train, spec.acquisition);
  fill(ds.calib, spec.n_calib, spec.acquisition);
  fill(ds.id_test, spec.n_id_test, spec.acquisition);
  fill(ds.ood_test, spec.n_ood_test, spec.shifted());
  return ds;
}

namespace {

constexpr const char* kSplitNames[] = {"train", "calib", "id_test", "ood_test"};

template <class D>
auto* split_of(D& d, int i) {
  decltype(&d.train) splits[] = {&d.train, &d.calib, &d.id_test, &d.ood_test};
  return splits[i];
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                   const SyntheticTaskSpec& spec) {
  std::filesystem::create_directories(dir);
  json index{{"format", "tta-dataset"}, {"version", 1}, {"spec", spec}, {"splits", json::object()}};
  for (int i = 0; i < 4; ++i) {
    const PairedDataset& split = *split_of(data, i);
    const std::string name = kSplitNames[i];
    json entry{{"ids", split.ids}, {"count", split.size()}};
    if (!split.empty()) {
      const Tensor xs = stack(split.inputs), ys = stack(split.targets);
      write_tnsr(dir / (name + "_x.tnsr"), xs);
      write_tnsr(dir / (name + "_y.tnsr"), ys);
      entry["x"] = name + "_x.tnsr";
      entry["y"] = name + "_y.tnsr";
      entry["x_fnv1a"] = hex64(checksum(xs));
      entry["y_fnv1a"] = hex64(checksum(ys));
    }
    index["splits"][name] = entry;
  }
  write_text_file(dir / "index.json", index.dump(2) + "\n");
}

namespace {

json read_index(const std::filesystem::path& dir) {
  json index = parse_json(read_text_file(dir / "index.json"), (dir / "index.json").string());
  if (index.value("format", "") != "tta-dataset") throw FormatError("not a dataset index: " + dir.string());
  if (index.value("version", 0) != 1) throw FormatError("unsupported dataset version in " + dir.string());
  return index;
}

Tensor read_checked(const std::filesystem::path& path, const std::string& expected) {
  Tensor t = read_tnsr(path);
  if (hex64(checksum(t)) != expected) throw FormatError("content hash mismatch: " + path.string());
  return t;
}

}  // namespace

SyntheticTaskSpec read_dataset_spec(const std::filesystem::path& dir) {
  return read_index(dir).at("spec").get<SyntheticTaskSpec>();
}

SyntheticDataset read_dataset(const std::filesystem::path& dir) {
  const json index = read_index(dir);
  SyntheticDataset ds;
  try {
    for (int i = 0; i < 4; ++i) {
      const json& entry = index.at("splits").at(kSplitNames[i]);
      PairedDataset& split = *split_of(ds, i);
      split.ids = entry.at("ids").get<std::vector<int>>();
      if (split.ids.empty()) continue;
      split.inputs = unstack(read_checked(dir / entry.at("x").get<std::string>(), entry.at("x_fnv1a")));
      split.targets = unstack(read_checked(dir / entry.at("y").get<std::string>(), entry.at("y_fnv1a")));
      if (split.inputs.size() != split.ids.size() || split.targets.size() != split.ids.size()) {
        throw FormatError("split size mismatch in " + dir.string());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset index: " + std::string(e.what()));
  }
  return ds;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("write_pgm expects a [1,H,W] image");
  const int h = image.dim(1), w = image.dim(2);
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (float v : image.data()) {
    const double unit = std::clamp((static_cast<double>(v) + 1.0) / 2.0, 0.0, 1.0);
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
  write_text_file(path, bytes);
}

}  // namespace tta
