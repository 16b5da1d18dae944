#pragma once

// Single-file checkpoint: JSON metadata (run config, vocabulary, training
// progress) followed by named float tensors and optional optimizer
// moments.

#include "refseg/nn.hpp"
#include "refseg/optimizer.hpp"
#include "refseg/tensor.hpp"

#include <string>
#include <vector>

namespace refseg {

struct CheckpointData {
  std::string meta_json;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> tensors;
  bool has_optimizer = false;
  AdamW::State optimizer;
};

void save_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

// Copies every model tensor (params and buffers) into a checkpoint entry.
void collect_tensors(const NamedTensors<float>& named, CheckpointData& out);

// Restores by name; shape mismatches raise with both shapes in the message.
void restore_tensors(const CheckpointData& data, NamedTensors<float>& named);

}  // namespace refseg
