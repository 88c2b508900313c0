#pragma once

#include <cstdint>
#include <filesystem>

#include "tta/recon_suite.hpp"
#include "tta/translate_net.hpp"

namespace tta {

/// A checkpoint was produced for a different architecture than requested.
class ArchitectureError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr int kCheckpointVersion = 1;

struct TrainingInfo {
  std::uint64_t seed = 0;
  int epochs = 0;
};

// Checkpoint directory: manifest.json plus one TNSR blob per parameter, each
// verified against its FNV-1a content hash on load.

void save_task_model(const TaskModel& model, const std::filesystem::path& dir, const TrainingInfo& info = {});
TaskModel load_task_model(const std::filesystem::path& dir, TrainingInfo* info = nullptr);

void save_autoencoder(const Autoencoder& ae, const std::filesystem::path& dir);
Autoencoder load_autoencoder(const std::filesystem::path& dir);

/// One subdirectory per member.
void save_recon_suite(const ReconSuite& suite, const std::filesystem::path& dir, const TrainingInfo& info = {});
/// Throws ArchitectureError if the suite was built for a different task architecture.
ReconSuite load_recon_suite(const std::filesystem::path& dir, const TaskArch& expected);

}  // namespace tta
