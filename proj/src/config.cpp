#include "spkmoco/config.hpp"

#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "spkmoco/errors.hpp"

namespace spkmoco {

using json = nlohmann::ordered_json;

Workflow parse_workflow(const std::string& name) {
  if (name == "ce") return Workflow::ce;
  if (name == "aam") return Workflow::aam;
  if (name == "moco") return Workflow::moco;
  throw ParameterError("unknown workflow '" + name + "' (ce|aam|moco)");
}

const char* workflow_name(Workflow w) {
  switch (w) {
    case Workflow::ce: return "ce";
    case Workflow::aam: return "aam";
    case Workflow::moco: return "moco";
  }
  return "?";
}

RunConfig RunConfig::defaults(Workflow workflow) {
  RunConfig c;
  c.workflow = workflow;
  switch (workflow) {
    case Workflow::ce:
      c.lr_start = 1e-4;
      c.lr_end = 1e-5;
      c.max_grad_norm = 2.0;
      c.dropout = 0.5;
      c.batch_size = 1024;
      break;
    case Workflow::aam:
      c.lr_start = 1e-5;
      c.lr_end = 1e-6;
      c.max_grad_norm = 6.0;
      c.dropout = 0.0;
      c.batch_size = 1024;
      break;
    case Workflow::moco:
      c.lr_start = 1e-4;
      c.lr_end = 1e-5;
      c.max_grad_norm = 2.0;
      c.dropout = 0.0;
      c.batch_size = 256;
      break;
  }
  return c;
}

void RunConfig::validate() const {
  encoder.validate();
  augment.validate();
  aam.validate();
  moco.validate();
  if (!(lr_end > 0.0) || !(lr_start >= lr_end))
    throw ParameterError("learning rates need lr_start >= lr_end > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be nonnegative");
  if (max_grad_norm && !(*max_grad_norm > 0.0)) throw ParameterError("max_grad_norm must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
  if (batch_size < 2) throw ParameterError("batch size must be at least 2 (batch norm)");
  if (steps_per_epoch == 0) throw ParameterError("steps_per_epoch must be positive");
  if (workflow == Workflow::moco) {
    if (batch_size % moco.n_shuffle_groups != 0)
      throw ParameterError("batch size must be divisible by moco.shuffle_groups");
    if (batch_size / moco.n_shuffle_groups < 2)
      throw ParameterError("each shuffle group needs at least 2 samples");
    if (moco.queue_size < batch_size) throw ParameterError("moco.queue_size must be >= batch size");
  }
}

void RunConfig::validate_paths() const {
  if (train_features.empty()) throw ParameterError("data.train_features is not set");
  if (!std::filesystem::exists(train_features))
    throw DataError("missing training features: " + train_features.string());
  if (init_from && !std::filesystem::exists(*init_from))
    throw DataError("missing init checkpoint: " + init_from->string());
}

namespace {

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ParameterError(key + ": expected a nonnegative integer");
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw ParameterError(key + ": wrong value type");
  }
}

#define SPK_FIELD(KEY, TYPE, MEMBER)                                      \
  Field {                                                                 \
    KEY, [](const RunConfig& c) { return json(c.MEMBER); },               \
        [](RunConfig& c, const json& v) { c.MEMBER = as<TYPE>(v, KEY); } \
  }

#define SPK_PATH(KEY, MEMBER)                                                \
  Field {                                                                    \
    KEY, [](const RunConfig& c) { return json(c.MEMBER.string()); },         \
        [](RunConfig& c, const json& v) { c.MEMBER = as<std::string>(v, KEY); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"workflow", [](const RunConfig& c) { return json(workflow_name(c.workflow)); },
            [](RunConfig& c, const json& v) { c.workflow = parse_workflow(as<std::string>(v, "workflow")); }},
      SPK_PATH("data.train_features", train_features),
      SPK_FIELD("data.dev_per_speaker", std::size_t, dev_per_speaker),
      SPK_FIELD("data.min_train_frames", std::size_t, min_train_frames),
      SPK_FIELD("encoder.input_dim", std::size_t, encoder.input_dim),
      Field{"encoder.frame_dims",
            [](const RunConfig& c) { return json(c.encoder.frame_dims); },
            [](RunConfig& c, const json& v) {
              const auto dims = as<std::vector<std::size_t>>(v, "encoder.frame_dims");
              if (dims.size() != kNumFrameLayers)
                throw ParameterError("encoder.frame_dims needs " + std::to_string(kNumFrameLayers) + " entries");
              std::copy(dims.begin(), dims.end(), c.encoder.frame_dims.begin());
            }},
      SPK_FIELD("encoder.embed_a_dim", std::size_t, encoder.embed_a_dim),
      SPK_FIELD("encoder.embed_b_dim", std::size_t, encoder.embed_b_dim),
      SPK_FIELD("encoder.variance_floor", double, encoder.variance_floor),
      SPK_FIELD("encoder.bn_eps", double, encoder.bn_eps),
      SPK_FIELD("encoder.bn_momentum", double, encoder.bn_momentum),
      SPK_FIELD("augment.crop_min", std::size_t, augment.crop_min),
      SPK_FIELD("augment.crop_max", std::size_t, augment.crop_max),
      SPK_FIELD("augment.warp_window", std::size_t, augment.warp_window),
      SPK_FIELD("augment.max_time_mask", std::size_t, augment.max_time_mask),
      SPK_FIELD("augment.max_freq_mask", std::size_t, augment.max_freq_mask),
      SPK_FIELD("augment.n_time_masks", std::size_t, augment.n_time_masks),
      SPK_FIELD("augment.n_freq_masks", std::size_t, augment.n_freq_masks),
      SPK_FIELD("augment.supervised", bool, supervised_spec_augment),
      SPK_FIELD("objective.aam_scale", double, aam.scale),
      SPK_FIELD("objective.aam_margin", double, aam.margin),
      SPK_FIELD("objective.dropout", double, dropout),
      SPK_FIELD("moco.queue_size", std::size_t, moco.queue_size),
      SPK_FIELD("moco.beta", double, moco.beta),
      SPK_FIELD("moco.tau", double, moco.tau),
      SPK_FIELD("moco.shuffle_groups", std::size_t, moco.n_shuffle_groups),
      SPK_FIELD("optim.lr_start", double, lr_start),
      SPK_FIELD("optim.lr_end", double, lr_end),
      SPK_FIELD("optim.momentum", double, momentum),
      SPK_FIELD("optim.weight_decay", double, weight_decay),
      Field{"optim.max_grad_norm",
            [](const RunConfig& c) { return c.max_grad_norm ? json(*c.max_grad_norm) : json(nullptr); },
            [](RunConfig& c, const json& v) {
              if (v.is_null()) {
                c.max_grad_norm.reset();
              } else {
                c.max_grad_norm = as<double>(v, "optim.max_grad_norm");
              }
            }},
      SPK_FIELD("train.steps", std::size_t, steps),
      SPK_FIELD("train.steps_per_epoch", std::size_t, steps_per_epoch),
      SPK_FIELD("train.batch_size", std::size_t, batch_size),
      SPK_FIELD("train.seed", std::uint64_t, seed),
      SPK_PATH("train.out_dir", out_dir),
      Field{"train.init_from",
            [](const RunConfig& c) { return c.init_from ? json(c.init_from->string()) : json(nullptr); },
            [](RunConfig& c, const json& v) {
              if (v.is_null()) {
                c.init_from.reset();
              } else {
                c.init_from = as<std::string>(v, "train.init_from");
              }
            }},
  };
  return f;
}

#undef SPK_FIELD
#undef SPK_PATH

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ParameterError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParameterError("config must be a JSON object");
  Workflow w = Workflow::aam;
  if (doc.contains("workflow")) w = parse_workflow(as<std::string>(doc["workflow"], "workflow"));
  RunConfig c = RunConfig::defaults(w);
  for (const auto& [key, value] : doc.items())
    if (key != "workflow") field(key).set(c, value);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ParameterError("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    // Only the workflow field changes here; its defaults are not reapplied.
    field(key).set(config, value);
  }
}

std::string config_to_json(const RunConfig& config) {
  json doc = json::object();
  for (const auto& f : fields()) doc[f.key] = f.get(config);
  return doc.dump(2) + "\n";
}

}  // namespace spkmoco
