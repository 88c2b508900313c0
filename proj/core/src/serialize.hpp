#pragma once

// JSON mappings shared by the dataset index, checkpoint manifests and the
// pipeline configuration.

#include <json.hpp>

#include "tta/dataset.hpp"
#include "tta/translate_net.hpp"

namespace tta {

using nlohmann::json;

inline void to_json(json& j, const Acquisition& a) {
  j = json{{"noise_sigma", a.noise_sigma}, {"gamma", a.gamma}, {"blur_radius", a.blur_radius}};
}

inline void from_json(const json& j, Acquisition& a) {
  a.noise_sigma = j.value("noise_sigma", a.noise_sigma);
  a.gamma = j.value("gamma", a.gamma);
  a.blur_radius = j.value("blur_radius", a.blur_radius);
}

inline void to_json(json& j, const SyntheticTaskSpec& s) {
  j = json{{"image_size", s.image_size},
           {"kind", std::string(task_kind_name(s.kind))},
           {"n_train", s.n_train},
           {"n_calib", s.n_calib},
           {"n_id_test", s.n_id_test},
           {"n_ood_test", s.n_ood_test},
           {"acquisition", s.acquisition},
           {"shift_noise_multiplier", s.shift_noise_multiplier},
           {"shift_gamma", s.shift_gamma},
           {"shift_blur_radius", s.shift_blur_radius},
           {"style_gamma", s.style_gamma},
           {"edge_softness", s.edge_softness},
           {"seed", s.seed}};
}

inline void from_json(const json& j, SyntheticTaskSpec& s) {
  s.image_size = j.value("image_size", s.image_size);
  if (j.contains("kind")) s.kind = parse_task_kind(j.at("kind").get<std::string>());
  s.n_train = j.value("n_train", s.n_train);
  s.n_calib = j.value("n_calib", s.n_calib);
  s.n_id_test = j.value("n_id_test", s.n_id_test);
  s.n_ood_test = j.value("n_ood_test", s.n_ood_test);
  if (j.contains("acquisition")) j.at("acquisition").get_to(s.acquisition);
  s.shift_noise_multiplier = j.value("shift_noise_multiplier", s.shift_noise_multiplier);
  s.shift_gamma = j.value("shift_gamma", s.shift_gamma);
  s.shift_blur_radius = j.value("shift_blur_radius", s.shift_blur_radius);
  s.style_gamma = j.value("style_gamma", s.style_gamma);
  s.edge_softness = j.value("edge_softness", s.edge_softness);
  s.seed = j.value("seed", s.seed);
}

inline void to_json(json& j, const TaskArch& a) {
  j = json{{"n_layers", a.n_layers},
           {"image_size", a.image_size},
           {"io_channels", a.io_channels},
           {"base_channels", a.base_channels}};
}

inline void from_json(const json& j, TaskArch& a) {
  a.n_layers = j.value("n_layers", a.n_layers);
  a.image_size = j.value("image_size", a.image_size);
  a.io_channels = j.value("io_channels", a.io_channels);
  a.base_channels = j.value("base_channels", a.base_channels);
}

/// Parses JSON text, mapping parse errors to FormatError.
inline json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace tta
