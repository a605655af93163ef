#include "bunet/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bunet/rng.hpp"

namespace bunet {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& section,
                    const std::set<std::string>& allowed) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key()))
      fail("config: unknown key '" + item.key() + "' in section '" + section + "'");
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void get_bool(const json& obj, const std::string& section, const char* key, bool& out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_boolean()) fail("config: " + section + "." + key + " must be a boolean");
    out = v->get<bool>();
  }
}

void get_int(const json& obj, const std::string& section, const char* key, int& out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer()) fail("config: " + section + "." + key + " must be an integer");
    out = v->get<int>();
  }
}

void get_u64(const json& obj, const std::string& section, const char* key, std::uint64_t& out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                    v->get<std::int64_t>() < 0))
      fail("config: " + section + "." + key + " must be a non-negative integer");
    out = v->get<std::uint64_t>();
  }
}

void get_double(const json& obj, const std::string& section, const char* key, double& out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number()) fail("config: " + section + "." + key + " must be a number");
    out = v->get<double>();
  }
}

void parse_model(const json& obj, NetConfig& m) {
  reject_unknown(obj, "model",
                 {"in_channels", "base_channels", "enable_bd", "enable_bgfe", "enable_saam",
                  "fusion_mode", "saam_reduction", "saam_dilations"});
  get_int(obj, "model", "in_channels", m.in_channels);
  get_int(obj, "model", "base_channels", m.base_channels);
  get_bool(obj, "model", "enable_bd", m.enable_bd);
  get_bool(obj, "model", "enable_bgfe", m.enable_bgfe);
  get_bool(obj, "model", "enable_saam", m.enable_saam);
  if (const json* v = find(obj, "fusion_mode")) {
    if (!v->is_string()) fail("config: model.fusion_mode must be a string");
    m.fusion_mode = fusion_mode_from_name(v->get<std::string>());
  }
  get_double(obj, "model", "saam_reduction", m.saam_reduction);
  if (const json* v = find(obj, "saam_dilations")) {
    if (!v->is_array() || v->size() != 4)
      fail("config: model.saam_dilations must be an array of 4 integers");
    for (int i = 0; i < 4; ++i) {
      const json& e = (*v)[i];
      if (!e.is_number_integer() || e.get<int>() < 1)
        fail("config: model.saam_dilations entries must be positive integers");
      m.saam_dilations[static_cast<std::size_t>(i)] = e.get<int>();
    }
  }
}

void parse_train(const json& obj, TrainConfig& t) {
  reject_unknown(obj, "train",
                 {"lr0", "weight_decay", "momentum", "power", "epochs", "batch_size", "seed",
                  "eval_every"});
  get_double(obj, "train", "lr0", t.lr0);
  get_double(obj, "train", "weight_decay", t.weight_decay);
  get_double(obj, "train", "momentum", t.momentum);
  get_double(obj, "train", "power", t.power);
  get_int(obj, "train", "epochs", t.epochs);
  get_int(obj, "train", "batch_size", t.batch_size);
  get_u64(obj, "train", "seed", t.seed);
  get_int(obj, "train", "eval_every", t.eval_every);
}

void parse_synth(const json& obj, SynthConfig& s) {
  reject_unknown(obj, "synth",
                 {"count", "size", "seed", "blob_count_range", "contrast", "speckle_strength",
                  "blur_radius"});
  get_int(obj, "synth", "count", s.count);
  get_int(obj, "synth", "size", s.size);
  get_u64(obj, "synth", "seed", s.seed);
  if (const json* v = find(obj, "blob_count_range")) {
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_integer() ||
        !(*v)[1].is_number_integer())
      fail("config: synth.blob_count_range must be an array of 2 integers");
    s.blob_min = (*v)[0].get<int>();
    s.blob_max = (*v)[1].get<int>();
  }
  if (const json* v = find(obj, "contrast")) {
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
      fail("config: synth.contrast must be an array of 2 numbers");
    s.contrast_min = (*v)[0].get<double>();
    s.contrast_max = (*v)[1].get<double>();
  }
  get_double(obj, "synth", "speckle_strength", s.speckle_strength);
  get_int(obj, "synth", "blur_radius", s.blur_radius);
}

void parse_loss(const json& obj, LossWeights& l) {
  reject_unknown(obj, "loss", {"lambda_bce", "lambda_boundary"});
  get_double(obj, "loss", "lambda_bce", l.lambda_bce);
  get_double(obj, "loss", "lambda_boundary", l.lambda_boundary);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (loss.lambda_bce < 0 || loss.lambda_boundary < 0)
    fail("config: loss weights must be >= 0");
  if (split_ratio < 0.0 || split_ratio > 1.0)
    fail("config: split_ratio must be in [0, 1]");
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail("config: top level must be a JSON object");
  reject_unknown(doc, "(top level)", {"model", "train", "synth", "loss", "split_ratio"});

  RunConfig cfg;
  if (const json* v = find(doc, "model")) {
    if (!v->is_object()) fail("config: 'model' must be an object");
    parse_model(*v, cfg.model);
  }
  if (const json* v = find(doc, "train")) {
    if (!v->is_object()) fail("config: 'train' must be an object");
    parse_train(*v, cfg.train);
  }
  if (const json* v = find(doc, "synth")) {
    if (!v->is_object()) fail("config: 'synth' must be an object");
    parse_synth(*v, cfg.synth);
  }
  if (const json* v = find(doc, "loss")) {
    if (!v->is_object()) fail("config: 'loss' must be an object");
    parse_loss(*v, cfg.loss);
  }
  get_double(doc, "(top level)", "split_ratio", cfg.split_ratio);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig cfg;
    cfg.validate();
    return cfg;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string canonical_config_json(const RunConfig& cfg) {
  json doc;  // nlohmann::json keeps keys sorted, which is exactly canonical
  doc["model"] = {{"in_channels", cfg.model.in_channels},
                  {"base_channels", cfg.model.base_channels},
                  {"enable_bd", cfg.model.enable_bd},
                  {"enable_bgfe", cfg.model.enable_bgfe},
                  {"enable_saam", cfg.model.enable_saam},
                  {"fusion_mode", fusion_mode_name(cfg.model.fusion_mode)},
                  {"saam_reduction", cfg.model.saam_reduction},
                  {"saam_dilations", cfg.model.saam_dilations}};
  doc["train"] = {{"lr0", cfg.train.lr0},
                  {"weight_decay", cfg.train.weight_decay},
                  {"momentum", cfg.train.momentum},
                  {"power", cfg.train.power},
                  {"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"seed", cfg.train.seed},
                  {"eval_every", cfg.train.eval_every}};
  doc["synth"] = {{"count", cfg.synth.count},
                  {"size", cfg.synth.size},
                  {"seed", cfg.synth.seed},
                  {"blob_count_range", {cfg.synth.blob_min, cfg.synth.blob_max}},
                  {"contrast", {cfg.synth.contrast_min, cfg.synth.contrast_max}},
                  {"speckle_strength", cfg.synth.speckle_strength},
                  {"blur_radius", cfg.synth.blur_radius}};
  doc["loss"] = {{"lambda_bce", cfg.loss.lambda_bce},
                 {"lambda_boundary", cfg.loss.lambda_boundary}};
  doc["split_ratio"] = cfg.split_ratio;
  return doc.dump();
}

std::uint64_t config_digest(const RunConfig& cfg) {
  return fnv1a64(canonical_config_json(cfg));
}

}  // namespace bunet
