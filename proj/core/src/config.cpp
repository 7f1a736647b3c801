#include "regtr/config.hpp"

#include "regtr/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>
#include <vector>

namespace regtr {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || !std::isfinite(out)) throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || d != std::floor(d)) throw InvalidArgument(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') throw InvalidArgument(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidArgument(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;  // model fields only
};

#define SIZE_FIELD(name, member)                                                             \
  Field {                                                                                    \
    name, [](RunConfig& c, const std::string& v) { c.member = to_size(name, v); },          \
        [](const RunConfig& c) { return std::to_string(c.member); }                          \
  }
#define DOUBLE_FIELD(name, member)                                                           \
  Field {                                                                                    \
    name, [](RunConfig& c, const std::string& v) { c.member = to_double(name, v); },        \
        [](const RunConfig& c) { return fmt(c.member); }                                     \
  }

const std::vector<Field>& model_fields() {
  static const std::vector<Field> fields = {
      SIZE_FIELD("d", model.d),
      SIZE_FIELD("heads", model.heads),
      SIZE_FIELD("layers", model.layers),
      SIZE_FIELD("ffn_hidden", model.ffn_hidden),
      SIZE_FIELD("head_hidden", model.head_hidden),
      SIZE_FIELD("feature_dim", model.feature_dim),
      SIZE_FIELD("backbone_hidden", model.backbone_hidden),
      DOUBLE_FIELD("voxel_size", model.voxel_size),
      SIZE_FIELD("levels", model.levels),
      DOUBLE_FIELD("level_factor", model.level_factor),
      DOUBLE_FIELD("neighbor_radius_factor", model.neighbor_radius_factor),
      SIZE_FIELD("max_neighbors", model.max_neighbors),
      Field{"posenc", [](RunConfig& c, const std::string& v) { c.model.posenc = parse_posenc_kind(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.posenc)); }},
      DOUBLE_FIELD("pos_scale", model.pos_scale),
      Field{"decoder", [](RunConfig& c, const std::string& v) { c.model.decoder = parse_decoder_kind(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.decoder)); }},
      DOUBLE_FIELD("lambda_o", model.lambda_o),
      DOUBLE_FIELD("lambda_f", model.lambda_f),
      DOUBLE_FIELD("overlap_radius", model.overlap_radius),
      DOUBLE_FIELD("feature_margin", model.feature_margin),
      Field{"loss_ablation",
            [](RunConfig& c, const std::string& v) { c.model.loss_ablation = parse_loss_ablation(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.loss_ablation)); }},
      DOUBLE_FIELD("circle_pos_margin", model.circle_pos_margin),
      DOUBLE_FIELD("circle_neg_margin", model.circle_neg_margin),
      DOUBLE_FIELD("circle_log_scale", model.circle_log_scale),
  };
  return fields;
}

const std::vector<Field>& run_fields() {
  static const std::vector<Field> fields = {
      DOUBLE_FIELD("lr", train.lr),
      DOUBLE_FIELD("weight_decay", train.weight_decay),
      DOUBLE_FIELD("beta1", train.beta1),
      DOUBLE_FIELD("beta2", train.beta2),
      DOUBLE_FIELD("adam_eps", train.eps),
      DOUBLE_FIELD("grad_clip", train.grad_clip),
      SIZE_FIELD("batch_size", train.batch_size),
      SIZE_FIELD("epochs", train.epochs),
      SIZE_FIELD("lr_halving_period", train.lr_halving_period),
      Field{"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64("seed", v); }, nullptr},
      Field{"resample_pose", [](RunConfig& c, const std::string& v) { c.train.resample_pose = to_bool("resample_pose", v); },
            nullptr},
      SIZE_FIELD("threads", train.threads),
      Field{"deterministic",
            [](RunConfig& c, const std::string& v) { c.train.deterministic = to_bool("deterministic", v); }, nullptr},
      Field{"train_data", [](RunConfig& c, const std::string& v) { c.train_data = v; }, nullptr},
      Field{"eval_data", [](RunConfig& c, const std::string& v) { c.eval_data = v; }, nullptr},
      Field{"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }, nullptr},
      Field{"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; }, nullptr},
      DOUBLE_FIELD("success_threshold", success_threshold),
      DOUBLE_FIELD("ransac_threshold", ransac_threshold),
      SIZE_FIELD("ransac_iterations", ransac_iterations),
  };
  return fields;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD

}  // namespace

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "regress") return DecoderKind::kRegress;
  if (s == "weighted") return DecoderKind::kWeighted;
  throw InvalidArgument("unknown decoder '" + std::string(s) + "' (expected regress|weighted)");
}

PosEncKind parse_posenc_kind(std::string_view s) {
  if (s == "sine") return PosEncKind::kSine;
  if (s == "learned") return PosEncKind::kLearned;
  throw InvalidArgument("unknown posenc '" + std::string(s) + "' (expected sine|learned)");
}

LossAblation parse_loss_ablation(std::string_view s) {
  if (s == "full") return LossAblation::kFull;
  if (s == "no-feat") return LossAblation::kNoFeat;
  if (s == "circle") return LossAblation::kCircle;
  if (s == "all-layers") return LossAblation::kAllLayers;
  throw InvalidArgument("unknown loss ablation '" + std::string(s) + "' (expected full|no-feat|circle|all-layers)");
}

std::string_view to_string(DecoderKind k) { return k == DecoderKind::kRegress ? "regress" : "weighted"; }
std::string_view to_string(PosEncKind k) { return k == PosEncKind::kSine ? "sine" : "learned"; }
std::string_view to_string(LossAblation k) {
  switch (k) {
    case LossAblation::kFull: return "full";
    case LossAblation::kNoFeat: return "no-feat";
    case LossAblation::kCircle: return "circle";
    case LossAblation::kAllLayers: return "all-layers";
  }
  return "full";
}

double ModelConfig::final_voxel_size() const {
  double v = voxel_size;
  for (std::size_t i = 1; i < levels; ++i) v *= level_factor;
  return v;
}

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw InvalidArgument("model: d (" + std::to_string(d) + ") must be a positive multiple of heads (" +
                          std::to_string(heads) + ")");
  }
  if (d < 6) throw InvalidArgument("model: d must be >= 6 for positional encodings");
  if (ffn_hidden == 0 || feature_dim == 0 || backbone_hidden == 0) throw InvalidArgument("model: widths must be positive");
  if (!(voxel_size > 0)) throw InvalidArgument("model: voxel_size must be > 0");
  if (levels < 1) throw InvalidArgument("model: levels must be >= 1");
  if (!(level_factor >= 1)) throw InvalidArgument("model: level_factor must be >= 1");
  if (!(neighbor_radius_factor > 0)) throw InvalidArgument("model: neighbor_radius_factor must be > 0");
  if (max_neighbors == 0) throw InvalidArgument("model: max_neighbors must be > 0");
  if (lambda_o < 0 || lambda_f < 0) throw InvalidArgument("model: loss weights must be >= 0");
  if (overlap_radius < 0 || feature_margin < 0) throw InvalidArgument("model: radii must be >= 0");
  if (!(pos_scale > 0)) throw InvalidArgument("model: pos_scale must be > 0");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw InvalidArgument("train: lr must be > 0");
  if (!(grad_clip > 0)) throw InvalidArgument("train: grad_clip must be > 0");
  if (weight_decay < 0) throw InvalidArgument("train: weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw InvalidArgument("train: betas must be in [0, 1)");
  if (!(eps > 0)) throw InvalidArgument("train: adam_eps must be > 0");
  if (batch_size == 0) throw InvalidArgument("train: batch_size must be > 0");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto* table : {&model_fields(), &run_fields()}) {
    for (const Field& f : *table) {
      if (key == f.key) {
        f.set(cfg, value);
        return;
      }
    }
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

std::size_t resolve_threads(std::size_t requested, bool deterministic) {
  if (deterministic) return 1;
  if (requested == 0) return std::max(1u, std::thread::hardware_concurrency());
  return requested;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string model_config_text(const ModelConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  std::string out;
  for (const Field& f : model_fields()) out += std::string(f.key) + " = " + f.get(rc) + "\n";
  return out;
}

ModelConfig parse_model_config_text(std::string_view text) {
  RunConfig rc = parse_config(text);
  return rc.model;
}

}  // namespace regtr
