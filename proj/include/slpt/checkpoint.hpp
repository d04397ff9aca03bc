#pragma once

#include <filesystem>

#include "slpt/prompt.hpp"

namespace slpt {

/// Checkpoint layout (little-endian):
///   char[8]  magic "SLPTCKPT"
///   u32      version (1)
///   u64      header length in bytes
///   char[]   JSON header: kind, tensor table (name, shape), kind-specific fields
///   f64[]    tensor data in table order
///
/// Backbone checkpoints carry a `frozen` flag. Prompted checkpoints hold the
/// tunable tensors and fixed prompt noise maps plus the hash of the backbone
/// they were tuned against.

void save_backbone(const std::filesystem::path& file, const FrozenBackbone& backbone);
void save_backbone(const std::filesystem::path& file, const Backbone& backbone, const PretrainReport& report);

FrozenBackbone load_frozen_backbone(const std::filesystem::path& file);

/// Loads a backbone for further training. A checkpoint written frozen is
/// rejected with FrozenParameterError unless `override_freeze` is set.
Backbone load_trainable_backbone(const std::filesystem::path& file, bool override_freeze = false);

void save_prompted(const std::filesystem::path& file, const PromptedModel& model);

/// Restores tunable tensors into a model built on the same backbone and
/// configuration. Throws InvalidArgument on a backbone hash, name or shape mismatch.
void load_prompted(const std::filesystem::path& file, PromptedModel& model);

/// Rebuilds a prompted model from a checkpoint on top of `backbone`.
PromptedModel load_prompted_model(const std::filesystem::path& file, std::shared_ptr<const FrozenBackbone> backbone);

} // namespace slpt
