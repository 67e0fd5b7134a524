#pragma once

// Flat key = value run configuration shared by every subcommand.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "teller/ar_model.hpp"
#include "teller/audio_frontend.hpp"
#include "teller/etm.hpp"
#include "teller/experiments.hpp"
#include "teller/pipeline.hpp"
#include "teller/rvq.hpp"
#include "teller/synth_data.hpp"
#include "teller/trainer.hpp"

namespace teller::cli {

// Bad invocation: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { kInt, kUInt, kDouble, kBool, kString, kIntList };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

const std::vector<KeySpec>& key_specs();

class RunConfig {
 public:
  RunConfig();  // all defaults

  // Unknown keys and unparsable values raise UsageError.
  void set(const std::string& key, const std::string& value);
  // "key=value" as given to --set.
  void set_assignment(const std::string& assignment);
  // Lines of `key = value`; '#' starts a comment.
  void parse_text(const std::string& text, const std::string& origin = "<text>");
  void load_file(const std::string& path);

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Sorted `key = value` lines; parse_text of this restores the config.
  std::string serialize() const;
  // FNV-1a 64 of serialize(), as 16 hex digits.
  std::string hash() const;

  // Typed views.
  synth::SynthConfig synth() const;
  int clips() const;
  audio::FrontendConfig frontend() const;
  rvq::RVQConfig rvq() const;
  train::TrainConfig train(const std::string& prefix) const;  // rvq_train, ar_train, etm_train
  // Vocabulary, tokens per chunk and audio width come from the codec and frontend.
  ar::ARConfig ar(const rvq::RVQConfig& codec, int audio_dim, bool dual_head) const;
  etm::ETMConfig etm() const;
  etm::EtmSynthConfig etm_synth() const;
  ar::SamplerConfig sampler() const;
  pipeline::RasterConfig raster() const;
  pipeline::PipelineConfig pipeline(const audio::FrontendConfig& frontend) const;
  exp::ArExperimentConfig experiment(const rvq::RVQConfig& codec, bool dual_head) const;

 private:
  const KeySpec& spec(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string format_double(double v);

}  // namespace teller::cli
