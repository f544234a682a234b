#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "newscap/decoder.hpp"
#include "newscap/encoder.hpp"
#include "newscap/nee.hpp"
#include "newscap/synth.hpp"

namespace newscap {

// Flat key=value run configuration. Unknown keys are rejected; missing
// keys fall back to documented defaults; echo() serializes the fully
// resolved set.
class RunConfig {
 public:
  static RunConfig defaults();
  static RunConfig load(const std::string& path);  // '#' comments, blank lines ok
  static const std::map<std::string, std::string>& schema_defaults();

  void set(const std::string& key, const std::string& value);
  void set_pair(const std::string& key_equals_value);  // "key=value"
  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string echo() const;  // every key, sorted, one per line
  void write(const std::string& path) const;

  std::uint64_t seed() const;
  void set_seed(std::uint64_t seed);

  GeneratorConfig generator() const;
  ModelConfig model() const;
  NeeConfig nee() const;
  TrainConfig trainer() const;
  SplitRatios splits() const;
  std::size_t vocab_min_count() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace newscap
