#include "tta/checkpoint.hpp"

#include "serialize.hpp"
#include "tta/tensor_io.hpp"

namespace tta {

namespace {

namespace fs = std::filesystem;

json save_parameters(const std::vector<Parameter>& params, const fs::path& dir) {
  json list = json::array();
  for (const Parameter& p : params) {
    const std::string file = p.name + ".tnsr";
    write_tnsr(dir / file, p.value);
    list.push_back({{"name", p.name}, {"file", file}, {"shape", p.value.shape()}, {"fnv1a", hex64(checksum(p.value))}});
  }
  return list;
}

void load_parameters(std::vector<Parameter>& params, const json& list, const fs::path& dir) {
  if (list.size() != params.size()) throw ArchitectureError("parameter count mismatch in " + dir.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = list.at(i);
    if (entry.at("name").get<std::string>() != params[i].name) {
      throw ArchitectureError("unexpected parameter '" + entry.at("name").get<std::string>() + "' in " + dir.string());
    }
    const fs::path path = dir / entry.at("file").get<std::string>();
    Tensor t = read_tnsr(path);
    if (hex64(checksum(t)) != entry.at("fnv1a").get<std::string>()) {
      throw FormatError("content hash mismatch: " + path.string());
    }
    if (t.shape() != params[i].value.shape()) {
      throw ArchitectureError("shape mismatch for " + params[i].name + ": " + to_string(t.shape()) + " vs " +
                              to_string(params[i].value.shape()));
    }
    params[i].value = std::move(t);
    params[i].zero_grad();
  }
}

json read_manifest(const fs::path& dir, std::string_view kind) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw FormatError("missing checkpoint manifest: " + path.string());
  json m = parse_json(read_text_file(path), path.string());
  if (m.value("format", "") != "tta-checkpoint") throw FormatError("not a checkpoint: " + dir.string());
  if (m.value("version", 0) != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(m.value("version", 0)) + " in " + dir.string());
  }
  if (m.value("kind", "") != kind) {
    throw FormatError("checkpoint " + dir.string() + " holds a " + m.value("kind", std::string("?")) + ", expected " +
                      std::string(kind));
  }
  return m;
}

json manifest(std::string_view kind) {
  return json{{"format", "tta-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

template <class F>
auto guarded(const fs::path& dir, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace

void save_task_model(const TaskModel& model, const fs::path& dir, const TrainingInfo& info) {
  fs::create_directories(dir);
  json m = manifest("task-model");
  m["arch"] = model.arch();
  m["init_seed"] = model.init_seed();
  m["trained"] = model.trained();
  m["training"] = {{"seed", info.seed}, {"epochs", info.epochs}};
  json layers = json::array();
  for (const LayerSpec& s : model.layers()) {
    static constexpr const char* kinds[] = {"same", "down", "up", "output"};
    layers.push_back({{"depth", s.depth},
                      {"kind", kinds[static_cast<int>(s.kind)]},
                      {"in_channels", s.in_channels},
                      {"out_channels", s.out_channels},
                      {"out_size", s.out_size}});
  }
  m["layers"] = layers;
  m["parameters"] = save_parameters(model.parameters(), dir);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

TaskModel load_task_model(const fs::path& dir, TrainingInfo* info) {
  const json m = read_manifest(dir, "task-model");
  return guarded(dir, [&] {
    TaskModel model(m.at("arch").get<TaskArch>(), m.at("init_seed").get<std::uint64_t>());
    load_parameters(model.parameters(), m.at("parameters"), dir);
    model.set_trained(m.at("trained").get<bool>());
    if (info) {
      info->seed = m.at("training").at("seed").get<std::uint64_t>();
      info->epochs = m.at("training").at("epochs").get<int>();
    }
    return model;
  });
}

void save_autoencoder(const Autoencoder& ae, const fs::path& dir) {
  fs::create_directories(dir);
  json m = manifest("autoencoder");
  m["ae_kind"] = ae.kind() == Autoencoder::Kind::Conv ? "conv" : "identity";
  m["channels"] = ae.channels();
  m["size"] = ae.size();
  m["hidden_channels"] = ae.hidden_channels();
  m["bottleneck_channels"] = ae.bottleneck_channels();
  m["trained"] = ae.trained();
  m["parameters"] = save_parameters(ae.parameters(), dir);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

Autoencoder load_autoencoder(const fs::path& dir) {
  const json m = read_manifest(dir, "autoencoder");
  return guarded(dir, [&] {
    const int channels = m.at("channels").get<int>(), size = m.at("size").get<int>();
    Autoencoder ae = m.at("ae_kind").get<std::string>() == "identity" ? Autoencoder::identity(channels, size)
                                                                       : Autoencoder(channels, size, 0, m.at("hidden_channels").get<int>(),
                                                                                     m.at("bottleneck_channels").get<int>());
    load_parameters(ae.parameters(), m.at("parameters"), dir);
    ae.set_trained(m.at("trained").get<bool>());
    return ae;
  });
}

void save_recon_suite(const ReconSuite& suite, const fs::path& dir, const TrainingInfo& info) {
  fs::create_directories(dir);
  json m = manifest("recon-suite");
  m["arch"] = suite.arch();
  m["num_levels"] = suite.num_levels();
  m["training"] = {{"seed", info.seed}, {"epochs", info.epochs}};
  m["members"] = suite.member_names();
  for (const std::string& name : suite.member_names()) save_autoencoder(suite.member(name), dir / ("member_" + name));
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

ReconSuite load_recon_suite(const fs::path& dir, const TaskArch& expected) {
  const json m = read_manifest(dir, "recon-suite");
  return guarded(dir, [&] {
    const TaskArch arch = m.at("arch").get<TaskArch>();
    if (!(arch == expected)) {
      throw ArchitectureError("architecture mismatch: suite in " + dir.string() + " was trained for n=" +
                              std::to_string(arch.n_layers) + " at " + std::to_string(arch.image_size) +
                              "px, task model has n=" + std::to_string(expected.n_layers) + " at " +
                              std::to_string(expected.image_size) + "px");
    }
    ReconSuite suite(arch, 0);
    if (m.at("members").get<std::vector<std::string>>() != suite.member_names()) {
      throw ArchitectureError("member list mismatch in " + dir.string());
    }
    for (const std::string& name : suite.member_names()) {
      Autoencoder ae = load_autoencoder(dir / ("member_" + name));
      if (ae.input_shape() != suite.member(name).input_shape()) {
        throw ArchitectureError("member " + name + " has input " + to_string(ae.input_shape()));
      }
      suite.member(name) = std::move(ae);
    }
    return suite;
  });
}

}  // namespace tta
