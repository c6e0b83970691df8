#ifndef FSCE_CONFIG_HPP
#define FSCE_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "fsce/cpe_loss.hpp"
#include "fsce/detector.hpp"

namespace fsce {

// Flat dotted-key configuration ("detector.lr = 0.01"). Later assignments
// win, so defaults < file < command-line flags.
class KeyValueConfig {
 public:
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void load_file(const std::string& path);  // '#' comments, blank lines ok

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& def) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& def) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

std::vector<std::string> split_csv(const std::string& s);

// detector.* keys applied over the given defaults.
DetectorConfig detector_config_from(const KeyValueConfig& kv, DetectorConfig base);
// cpe.* keys (temperature, phi, reweight, lambda).
CpeConfig cpe_config_from(const KeyValueConfig& kv, CpeConfig base);

// FNV-1a 64 content hash of a file, hex-encoded; used in run manifests.
std::string content_hash(const std::string& path);

}  // namespace fsce

#endif  // FSCE_CONFIG_HPP
