#pragma once

#include <string>
#include <vector>

#include "newscap/config.hpp"
#include "newscap/metrics.hpp"

namespace newscap {

// Command implementations behind the CLI. Each writes its artifacts plus
// resolved.cfg (the full config including the seed) into out_dir.

void cmd_synth(const RunConfig& config, const std::string& out_dir);

void cmd_train_nee(const RunConfig& config, const std::string& kb_path,
                   const std::string& out_dir);

void cmd_train(const RunConfig& config, const std::string& corpus_dir,
               const std::string& nee_checkpoint, const std::string& out_dir);

struct GenerateOptions {
  std::string alpha_mode = "oracle";  // oracle | auto | manual
  std::string alpha;                  // comma list for manual mode
  std::string zero_out = "none";      // none | text | image
  std::size_t beam = 1;
  std::size_t max_length = 20;
};

void cmd_generate(const RunConfig& config, const std::string& model_checkpoint,
                  const std::string& corpus_path, const GenerateOptions& options,
                  const std::string& out_dir);

void cmd_evaluate(const std::string& generated_path, const std::string& references_path,
                  const std::string& ref_mode, const std::string& out_dir);

void cmd_stats(const std::string& corpus_path, const std::string& out_dir);

// generated-captions JSONL: header line then one record per sample
struct GeneratedFile {
  std::string alpha_mode;
  std::string zero_out;
  std::vector<std::pair<std::string, TokenSeq>> captions;  // (sample id, tokens)
};
GeneratedFile load_generated(const std::string& path);

}  // namespace newscap
