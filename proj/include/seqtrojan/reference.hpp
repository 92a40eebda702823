#pragma once

#include <span>
#include <vector>

#include "seqtrojan/model.hpp"

// Serial scalar-loop forward passes, one example at a time. Written directly
// from the layer definitions without the batching, sorting, packing or table
// folding of the production kernels, and kept as the oracle those kernels are
// tested and benchmarked against.
namespace seqtrojan::reference {

std::vector<double> encode(const TrainedModel& model, std::span<const TokenId> tokens);

// Logits of every head, concatenated (2 per head).
std::vector<double> logits(const TrainedModel& model, std::span<const TokenId> tokens);

Matrix encode_batch(const TrainedModel& model, const PaddedBatch& batch);

}  // namespace seqtrojan::reference
