#include "cpl/checkpoint.hpp"

#include <string>

#include "cpl/config.hpp"
#include "cpl/error.hpp"
#include "cpl/tensor_io.hpp"

namespace cpl {

namespace {

constexpr std::string_view kMagic = "CPLCKPT1";

struct Entry {
  std::string name;
  const Tensor* tensor;
};

Tensor read_entry(const nlohmann::json& entries, std::size_t index, const std::string& name,
                  const Shape& expected, const std::vector<std::uint8_t>& blob) {
  if (index >= entries.size()) throw IoError("checkpoint is missing tensor " + name);
  const nlohmann::json& e = entries[index];
  try {
    if (e.at("name").get<std::string>() != name) {
      throw IoError("checkpoint tensor " + std::to_string(index) + " is '" +
                    e.at("name").get<std::string>() + "', expected '" + name + "'");
    }
    if (e.at("dtype").get<std::string>() != "f64") throw IoError(name + ": unsupported dtype");
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != expected) {
      throw IoError(name + ": shape " + shape_str(shape) + " disagrees with configured " +
                    shape_str(expected));
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(shape) * sizeof(double)) throw IoError(name + ": bad nbytes");
    return Tensor(shape, read_doubles(blob, offset, shape_numel(shape)));
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(name + ": malformed tensor entry: " + ex.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  std::vector<Entry> entries;
  const auto params = state.model.parameters();
  for (const Parameter* p : params) entries.push_back({p->name, &p->value});
  const auto& m = state.adam.first_moments();
  const auto& v = state.adam.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) entries.push_back({"adam.m/" + params[i]->name, &m[i]});
  for (std::size_t i = 0; i < v.size(); ++i) entries.push_back({"adam.v/" + params[i]->name, &v[i]});

  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::uint8_t> blob;
  for (const Entry& e : entries) {
    const std::uint64_t offset = blob.size();
    append_doubles(blob, *e.tensor);
    tensors.push_back({{"name", e.name},
                       {"shape", e.tensor->shape()},
                       {"dtype", "f64"},
                       {"offset", offset},
                       {"nbytes", blob.size() - offset}});
  }
  const nlohmann::json header{{"format_version", kCheckpointVersion},
                              {"config", to_json(state.config)},
                              {"step", state.step},
                              {"rng_state", state.rng.state()},
                              {"adam_step", state.adam.step()},
                              {"byte_order", "little"},
                              {"tensors", tensors}};
  return encode_framed(kMagic, header, blob);
}

std::unique_ptr<TrainState> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const FramedFile f = decode_framed(kMagic, bytes);
  const nlohmann::json& h = f.header;
  try {
    const int version = h.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint format version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    if (h.at("byte_order").get<std::string>() != "little") throw IoError("unsupported byte order");
    TrainConfig config;
    try {
      config = parse_train_config(h.at("config"));
    } catch (const ConfigError& e) {
      throw IoError(std::string("checkpoint config invalid: ") + e.what());
    }
    auto state = std::make_unique<TrainState>(config);
    state->step = h.at("step").get<std::uint64_t>();
    try {
      state->rng.restore(h.at("rng_state").get<std::string>());
    } catch (const Error& e) {
      throw IoError(std::string("checkpoint rng state invalid: ") + e.what());
    }
    const auto adam_step = h.at("adam_step").get<std::uint64_t>();
    const nlohmann::json& entries = h.at("tensors");
    if (!entries.is_array()) throw IoError("checkpoint tensors must be an array");

    auto params = state->model.parameters();
    std::size_t index = 0;
    for (Parameter* p : params) {
      p->value = read_entry(entries, index++, p->name, p->value.shape(), f.blob);
    }
    std::vector<Tensor> m, v;
    if (adam_step > 0) {
      for (Parameter* p : params)
        m.push_back(read_entry(entries, index++, "adam.m/" + p->name, p->value.shape(), f.blob));
      for (Parameter* p : params)
        v.push_back(read_entry(entries, index++, "adam.v/" + p->name, p->value.shape(), f.blob));
    }
    if (index != entries.size()) throw IoError("checkpoint has unexpected extra tensors");
    std::uint64_t expected_blob = 0;
    for (const auto& e : entries) expected_blob += e.at("nbytes").get<std::uint64_t>();
    if (expected_blob != f.blob.size()) throw IoError("checkpoint blob size disagrees with header");
    for (const Parameter* p : params) {
      if (!p->value.all_finite()) throw IoError(p->name + ": non-finite values in checkpoint");
    }
    state->adam.restore(adam_step, std::move(m), std::move(v));
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  write_bytes(path, serialize_checkpoint(state));
}

std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_bytes(path));
}

}  // namespace cpl
