#pragma once

#include <cstddef>
#include <span>

#include "partrain/netspec.hpp"
#include "partrain/params.hpp"
#include "partrain/partition.hpp"
#include "partrain/tensor.hpp"

namespace partrain {

template <typename T>
struct Model {
  NetworkSpec spec;
  ParameterStore<T> params;
};

/// Assembles the full model from K trained sub-models.
///
/// Hidden weights, biases and momenta are copied through the plan's index
/// maps and every connection between different sub-models starts at zero,
/// momentum included. The output layer is shared, so its weights (and weight
/// momenta) are divided by K and its bias (and bias momentum) becomes the
/// mean over sub-models. Right after merging, the full network's logits are
/// the mean of the sub-model logits.
///
/// Throws MergeError if the number of stores differs from plan.k or a store
/// does not match its sub-spec.
template <typename T>
ParameterStore<T> merge(const PartitionPlan& plan,
                        std::span<const ParameterStore<T>> sub_params);

/// Reads sub-model `index` back out of a full store through the plan. Applied
/// to a merged store it returns the sub-model's hidden parameters unchanged
/// and the shared output layer as stored in the full model.
template <typename T>
ParameterStore<T> extract_submodel(const PartitionPlan& plan,
                                   const ParameterStore<T>& full, std::size_t index);

/// Mean of the eval-mode logits of the given models.
template <typename T>
Tensor<T> ensemble_logits(std::span<const Model<T>> models, const Tensor<T>& input);

/// Merges `sub_params`, then returns the largest absolute difference between
/// the merged model's softmax output and the softmax of the ensemble mean
/// logits over every probe sample and class (eval mode).
template <typename T>
double merged_equals_ensemble_check(const PartitionPlan& plan,
                                    std::span<const ParameterStore<T>> sub_params,
                                    const Tensor<T>& probe);

/// Row-wise softmax of a [batch, ..., classes] tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace partrain
