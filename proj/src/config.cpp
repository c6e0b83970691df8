#include "fsce/config.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fsce {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

void KeyValueConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at " + path + ":" + std::to_string(lineno));
    kv_[key] = val;
  }
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
  }
}

int KeyValueConfig::get_int(const std::string& key, int def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an integer: " + it->second);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean: " + it->second);
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::string>& def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  return split_csv(it->second);
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<double> out;
  for (const auto& tok : split_csv(it->second)) out.push_back(std::stod(tok));
  return out;
}

DetectorConfig detector_config_from(const KeyValueConfig& kv, DetectorConfig c) {
  c.image_size = kv.get_int("detector.image_size", c.image_size);
  c.anchor_sizes = kv.get_double_list("detector.anchor_sizes", c.anchor_sizes);
  c.anchor_aspects = kv.get_double_list("detector.anchor_aspects", c.anchor_aspects);
  c.anchor_densify_below = kv.get_double("detector.anchor_densify_below", c.anchor_densify_below);
  c.d_r = kv.get_int("detector.dr", c.d_r);
  c.d_c = kv.get_int("detector.dc", c.d_c);
  c.alpha = kv.get_double("detector.alpha", c.alpha);
  c.roi_pool = kv.get_int("detector.roi_pool", c.roi_pool);
  c.rpn_pre_nms = kv.get_int("detector.rpn_pre_nms", c.rpn_pre_nms);
  c.rpn_post_nms_cap = kv.get_int("detector.rpn_post_nms_cap", c.rpn_post_nms_cap);
  c.rpn_nms_threshold = kv.get_double("detector.rpn_nms_threshold", c.rpn_nms_threshold);
  c.rpn_pos_iou = kv.get_double("detector.rpn_pos_iou", c.rpn_pos_iou);
  c.rpn_neg_iou = kv.get_double("detector.rpn_neg_iou", c.rpn_neg_iou);
  c.rpn_batch_size = kv.get_int("detector.rpn_batch_size", c.rpn_batch_size);
  c.rpn_fg_fraction = kv.get_double("detector.rpn_fg_fraction", c.rpn_fg_fraction);
  c.roi_batch_size = kv.get_int("detector.roi_batch_size", c.roi_batch_size);
  c.roi_fg_fraction = kv.get_double("detector.roi_fg_fraction", c.roi_fg_fraction);
  c.fg_iou_threshold = kv.get_double("detector.fg_iou_threshold", c.fg_iou_threshold);
  c.add_gt_proposals = kv.get_bool("detector.add_gt_proposals", c.add_gt_proposals);
  c.lr = kv.get_double("detector.lr", c.lr);
  c.lr_final_scale = kv.get_double("detector.lr_final_scale", c.lr_final_scale);
  c.momentum = kv.get_double("detector.momentum", c.momentum);
  c.weight_decay = kv.get_double("detector.weight_decay", c.weight_decay);
  c.steps = kv.get_int("detector.steps", c.steps);
  c.images_per_step = kv.get_int("detector.images_per_step", c.images_per_step);
  c.score_threshold = kv.get_double("detector.score_threshold", c.score_threshold);
  c.nms_threshold = kv.get_double("detector.nms_threshold", c.nms_threshold);
  c.max_detections = kv.get_int("detector.max_detections", c.max_detections);
  if (kv.has("detector.freeze")) {
    c.frozen.clear();
    for (const auto& name : kv.get_list("detector.freeze", {}))
      c.frozen.push_back(component_from_string(name));
  }
  return c;
}

CpeConfig cpe_config_from(const KeyValueConfig& kv, CpeConfig c) {
  c.temperature = kv.get_double("cpe.temperature", c.temperature);
  c.phi = kv.get_double("cpe.phi", c.phi);
  c.lambda = kv.get_double("cpe.lambda", c.lambda);
  if (kv.has("cpe.reweight")) c.reweight = reweight_mode_from_string(kv.get_string("cpe.reweight", ""));
  return c;
}

std::string content_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("content_hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[8192];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!f) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace fsce
