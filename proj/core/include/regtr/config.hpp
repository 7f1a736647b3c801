#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace regtr {

enum class DecoderKind { kRegress, kWeighted };
enum class PosEncKind { kSine, kLearned };
enum class LossAblation { kFull, kNoFeat, kCircle, kAllLayers };

DecoderKind parse_decoder_kind(std::string_view s);
PosEncKind parse_posenc_kind(std::string_view s);
LossAblation parse_loss_ablation(std::string_view s);
std::string_view to_string(DecoderKind k);
std::string_view to_string(PosEncKind k);
std::string_view to_string(LossAblation k);

struct ModelConfig {
  // transformer
  std::size_t d = 256;
  std::size_t heads = 8;
  std::size_t layers = 6;
  std::size_t ffn_hidden = 1024;
  std::size_t head_hidden = 0;  // hidden width of the regression MLP; 0 means d

  // backbone
  std::size_t feature_dim = 96;  // D
  std::size_t backbone_hidden = 64;
  double voxel_size = 0.05;  // finest voxel
  std::size_t levels = 2;    // voxel levels; each coarser one is level_factor times larger
  double level_factor = 4.0;
  double neighbor_radius_factor = 2.0;  // rho = factor * final voxel size
  std::size_t max_neighbors = 32;

  // encodings and decoders
  PosEncKind posenc = PosEncKind::kSine;
  double pos_scale = 1.0;
  DecoderKind decoder = DecoderKind::kRegress;

  // losses
  double lambda_o = 1.0;
  double lambda_f = 0.1;
  double overlap_radius = 0.0;  // r_o; 0 means 1.5 * voxel_size
  double feature_margin = 0.0;  // m; 0 means the final voxel size
  LossAblation loss_ablation = LossAblation::kFull;
  double circle_pos_margin = 0.1;
  double circle_neg_margin = 1.4;
  double circle_log_scale = 16.0;

  std::size_t effective_head_hidden() const { return head_hidden ? head_hidden : d; }
  double final_voxel_size() const;
  double effective_overlap_radius() const { return overlap_radius > 0 ? overlap_radius : 1.5 * voxel_size; }
  double effective_feature_margin() const { return feature_margin > 0 ? feature_margin : final_voxel_size(); }
  double neighbor_radius() const { return neighbor_radius_factor * final_voxel_size(); }
  /// Throws InvalidArgument describing the first violated constraint.
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.1;
  std::size_t batch_size = 2;
  std::size_t epochs = 50;
  std::size_t lr_halving_period = 20;  // epochs; 0 disables
  std::uint64_t seed = 0;
  /// Re-draw each training pair's relative pose every epoch.
  bool resample_pose = false;
  std::size_t threads = 0;  // 0 means all available cores
  bool deterministic = false;

  void validate() const;
};

/// Everything a config file can set. Paths are kept as given.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_data;
  std::string eval_data;
  std::string checkpoint;
  std::string output_dir;
  double success_threshold = 0.2;
  double ransac_threshold = 0.0;  // 0 means 2 * r_o
  std::size_t ransac_iterations = 1000;
};

/// Parses flat `key = value` text; `#` starts a comment. Unknown keys and
/// malformed values throw InvalidArgument naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies one key/value pair (same keys as the file format).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Stable `key = value` dump of the model fields, used as the checkpoint echo.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config_text(std::string_view text);

/// Worker count for a request: 1 when deterministic, the hardware
/// concurrency for 0, otherwise the request.
std::size_t resolve_threads(std::size_t requested, bool deterministic);

}  // namespace regtr
