#include "fusionseg/config.hpp"

#include "fusionseg/common.hpp"

namespace fusionseg {

using nlohmann::json;

void LossWeights::validate() const {
  if (l1 < 0 || l2 < 0 || l3 < 0 || l4 < 0)
    throw ValidationError("loss weights must be nonnegative");
  if (l4_activation_epoch < 0) throw ValidationError("l4_activation_epoch must be >= 0");
}

void ModelConfig::validate() const {
  if (input_size < 1) throw ValidationError("model.input_size must be >= 1");
  if (num_classes < 2) throw ValidationError("model.num_classes must be >= 2");
  if (backbone_stages < 1) throw ValidationError("model.backbone_stages must be >= 1");
  if (input_size % backbone_stride() != 0)
    throw ValidationError(cat("model.input_size ", input_size, " not divisible by backbone stride ",
                              backbone_stride()));
  int grid = input_size / backbone_stride();
  if (patch_size < 1 || grid % patch_size != 0)
    throw ValidationError(cat("model.patch_size ", patch_size, " does not divide the ", grid, "x",
                              grid, " backbone grid"));
  if (n_heads < 1 || embed_dim % n_heads != 0)
    throw ValidationError(cat("model.embed_dim ", embed_dim, " not divisible by model.n_heads ",
                              n_heads));
  if (depth < 1) throw ValidationError("model.depth must be >= 1");
  if (local_stages < 1) throw ValidationError("model.local_stages must be >= 1");
  if (se_reduction < 1) throw ValidationError("model.se_reduction must be >= 1");
  if (edge_shallow_excluded < 0) throw ValidationError("model.edge_shallow_excluded must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("model.dropout must be in [0,1)");
}

ModelConfig toy_model_config(int base, int input_size) {
  ModelConfig c;
  c.input_size = input_size;
  c.backbone_base = base;
  c.embed_dim = 4 * base;
  c.depth = 4;
  c.n_heads = 4;
  c.mlp_dim = 8 * base;
  c.local_base = base;
  c.se_reduction = 4;
  c.edge_channels = base;
  c.fusion_width = 2 * base;
  c.skip_width = base;
  c.decoder_base = base;
  return c;
}

int TrainConfig::effective_activation_epoch() const {
  if (epochs >= 300) return weights.l4_activation_epoch;
  return std::max(1, epochs / 3);
}

void TrainConfig::validate() const {
  // epochs == 0 is permitted so finetune can snapshot a base unchanged
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (lr0 <= 0) throw ValidationError("train.lr0 must be > 0");
  if (momentum < 0 || momentum >= 1) throw ValidationError("train.momentum must be in [0,1)");
  if (weight_decay < 0) throw ValidationError("train.weight_decay must be >= 0");
  if (max_steps < 0) throw ValidationError("train.max_steps must be >= 0");
  weights.validate();
}

void PhantomSpec::validate() const {
  if (n_slices < 1) throw ValidationError("phantom.n_slices must be >= 1");
  if (height < 1) throw ValidationError("phantom.height must be >= 1");
  if (width < 1) throw ValidationError("phantom.width must be >= 1");
  if (n_vessels < 0) throw ValidationError("phantom.n_vessels must be >= 0");
  int half = std::min(height, width) / 2;
  auto check_range = [&](const char* field, int lo, int hi) {
    if (lo < 1) throw ValidationError(cat("phantom.", field, ": minimum radius must be >= 1 pixel"));
    if (hi < lo) throw ValidationError(cat("phantom.", field, ": empty radius range"));
    if (hi >= half)
      throw ValidationError(cat("phantom.", field, ": maximum radius ", hi,
                                " must be < min(H,W)/2 = ", half));
  };
  check_range("vessel_radius", vessel_radius_min, vessel_radius_max);
  check_range("tumor_radius", tumor_radius_min, tumor_radius_max);
  if (noise_sigma < 0) throw ValidationError("phantom.noise_sigma must be >= 0");
}

json to_json(const ModelConfig& c) {
  return json{{"input_size", c.input_size},
              {"in_channels", c.in_channels},
              {"num_classes", c.num_classes},
              {"backbone_base", c.backbone_base},
              {"backbone_stages", c.backbone_stages},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"n_heads", c.n_heads},
              {"mlp_dim", c.mlp_dim},
              {"dropout", c.dropout},
              {"local_base", c.local_base},
              {"local_stages", c.local_stages},
              {"se_reduction", c.se_reduction},
              {"se_bypass", c.se_bypass},
              {"edge_channels", c.edge_channels},
              {"edge_shallow_excluded", c.edge_shallow_excluded},
              {"fusion_width", c.fusion_width},
              {"skip_width", c.skip_width},
              {"decoder_base", c.decoder_base},
              {"use_edge_module", c.use_edge_module},
              {"use_semantic_skips", c.use_semantic_skips},
              {"use_local_skips", c.use_local_skips}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr0", c.lr0},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"max_steps", c.max_steps},
              {"lambda1", c.weights.l1},
              {"lambda2", c.weights.l2},
              {"lambda3", c.weights.l3},
              {"lambda4", c.weights.l4},
              {"lambda4_activation_epoch", c.weights.l4_activation_epoch},
              {"sreg_l2", c.sreg_l2},
              {"flip_augment", c.flip_augment},
              {"freeze_encoders", c.freeze_encoders},
              {"disable_semantic_skips", c.disable_semantic_skips},
              {"disable_local_skips", c.disable_local_skips},
              {"disable_all_skips", c.disable_all_skips},
              {"disable_edge_module", c.disable_edge_module}};
}

json to_json(const PhantomSpec& c) {
  return json{{"n_slices", c.n_slices},
              {"height", c.height},
              {"width", c.width},
              {"n_vessels", c.n_vessels},
              {"vessel_radius_min", c.vessel_radius_min},
              {"vessel_radius_max", c.vessel_radius_max},
              {"tumor_radius_min", c.tumor_radius_min},
              {"tumor_radius_max", c.tumor_radius_max},
              {"noise_sigma", c.noise_sigma},
              {"seed", c.seed}};
}

namespace {
template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  get_if(j, "input_size", c.input_size);
  get_if(j, "in_channels", c.in_channels);
  get_if(j, "num_classes", c.num_classes);
  get_if(j, "backbone_base", c.backbone_base);
  get_if(j, "backbone_stages", c.backbone_stages);
  get_if(j, "patch_size", c.patch_size);
  get_if(j, "embed_dim", c.embed_dim);
  get_if(j, "depth", c.depth);
  get_if(j, "n_heads", c.n_heads);
  get_if(j, "mlp_dim", c.mlp_dim);
  get_if(j, "dropout", c.dropout);
  get_if(j, "local_base", c.local_base);
  get_if(j, "local_stages", c.local_stages);
  get_if(j, "se_reduction", c.se_reduction);
  get_if(j, "se_bypass", c.se_bypass);
  get_if(j, "edge_channels", c.edge_channels);
  get_if(j, "edge_shallow_excluded", c.edge_shallow_excluded);
  get_if(j, "fusion_width", c.fusion_width);
  get_if(j, "skip_width", c.skip_width);
  get_if(j, "decoder_base", c.decoder_base);
  get_if(j, "use_edge_module", c.use_edge_module);
  get_if(j, "use_semantic_skips", c.use_semantic_skips);
  get_if(j, "use_local_skips", c.use_local_skips);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  get_if(j, "epochs", c.epochs);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "lr0", c.lr0);
  get_if(j, "momentum", c.momentum);
  get_if(j, "weight_decay", c.weight_decay);
  get_if(j, "seed", c.seed);
  get_if(j, "max_steps", c.max_steps);
  get_if(j, "lambda1", c.weights.l1);
  get_if(j, "lambda2", c.weights.l2);
  get_if(j, "lambda3", c.weights.l3);
  get_if(j, "lambda4", c.weights.l4);
  get_if(j, "lambda4_activation_epoch", c.weights.l4_activation_epoch);
  get_if(j, "sreg_l2", c.sreg_l2);
  get_if(j, "flip_augment", c.flip_augment);
  get_if(j, "freeze_encoders", c.freeze_encoders);
  get_if(j, "disable_semantic_skips", c.disable_semantic_skips);
  get_if(j, "disable_local_skips", c.disable_local_skips);
  get_if(j, "disable_all_skips", c.disable_all_skips);
  get_if(j, "disable_edge_module", c.disable_edge_module);
  return c;
}

PhantomSpec phantom_spec_from_json(const json& j) {
  PhantomSpec c;
  get_if(j, "n_slices", c.n_slices);
  get_if(j, "height", c.height);
  get_if(j, "width", c.width);
  get_if(j, "n_vessels", c.n_vessels);
  get_if(j, "vessel_radius_min", c.vessel_radius_min);
  get_if(j, "vessel_radius_max", c.vessel_radius_max);
  get_if(j, "tumor_radius_min", c.tumor_radius_min);
  get_if(j, "tumor_radius_max", c.tumor_radius_max);
  get_if(j, "noise_sigma", c.noise_sigma);
  get_if(j, "seed", c.seed);
  return c;
}

void apply_overrides(const json& flat, ModelConfig& m, TrainConfig& t, PhantomSpec& d) {
  if (!flat.is_object()) throw ValidationError("config overrides must be a JSON object");
  json jm = to_json(m), jt = to_json(t), jd = to_json(d);
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const std::string& key = it.key();
    auto dot = key.find('.');
    if (dot == std::string::npos)
      throw ValidationError("config key must be '<section>.<field>': " + key);
    std::string section = key.substr(0, dot);
    std::string field = key.substr(dot + 1);
    json* target = nullptr;
    if (section == "model")
      target = &jm;
    else if (section == "train")
      target = &jt;
    else if (section == "data")
      target = &jd;
    else
      throw ValidationError("unknown config section: " + section);
    if (!target->contains(field))
      throw ValidationError("unknown config key: " + key);
    (*target)[field] = it.value();
  }
  m = model_config_from_json(jm);
  t = train_config_from_json(jt);
  d = phantom_spec_from_json(jd);
}

}  // namespace fusionseg
