#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tta/data.hpp"

namespace tta {

enum class TaskKind { Denoise, Style };

std::string_view task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Acquisition of a clean image: blur, contrast gamma, additive Gaussian noise.
struct Acquisition {
  double noise_sigma = 0.2;
  double gamma = 1.0;
  double blur_radius = 0.0;
};

struct SyntheticTaskSpec {
  int image_size = 32;
  TaskKind kind = TaskKind::Denoise;
  int n_train = 512;
  int n_calib = 128;
  int n_id_test = 256;
  int n_ood_test = 256;
  Acquisition acquisition;
  /// OOD acquisition = ID acquisition with noise sigma times this factor,
  /// gamma replaced by shift_gamma and blur by shift_blur_radius.
  double shift_noise_multiplier = 2.0;
  double shift_gamma = 1.0;
  double shift_blur_radius = 0.0;
  /// Target contrast remap of the style task.
  double style_gamma = 0.6;
  /// Gaussian blur sigma (pixels) applied to clean images; 0 keeps hard edges.
  double edge_softness = 0.0;
  std::uint64_t seed = 7;

  Acquisition shifted() const;
  void validate() const;
};

struct SyntheticDataset {
  PairedDataset train;
  PairedDataset calib;
  PairedDataset id_test;
  PairedDataset ood_test;
};

/// Smooth blobs plus rectangles in [-0.9, 0.9], shape [1,S,S].
Tensor clean_image(int size, std::uint64_t seed, double edge_softness = 0.0);
Tensor acquire(const Tensor& clean, const Acquisition& acq, std::uint64_t seed);
/// Pure function of (spec, sample id); ids are consecutive across the
/// train, calib, id_test and ood_test splits.
SyntheticDataset generate_dataset(const SyntheticTaskSpec& spec);

/// Writes <split>_x.tnsr / <split>_y.tnsr stacks plus index.json.
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                   const SyntheticTaskSpec& spec);
SyntheticDataset read_dataset(const std::filesystem::path& dir);
SyntheticTaskSpec read_dataset_spec(const std::filesystem::path& dir);

/// 8-bit binary PGM of a [1,H,W] image in [-1,1].
void write_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace tta
