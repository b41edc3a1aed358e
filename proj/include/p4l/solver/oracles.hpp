#pragma once

// Exact embeddings of tabular quantities into the linear tier, used by the
// oracle checks on finite MDPs.

#include <cstddef>
#include <vector>

#include "p4l/envs/finite.hpp"
#include "p4l/features/rbf.hpp"
#include "p4l/models/network.hpp"

namespace p4l::solver {

/// RBF basis whose centers are the one-hot observations e_0..e_{S-1}.
RbfBasis one_hot_basis(std::size_t n_states, double bandwidth = 1.0);

/// Linear-tier parameters whose raw output at observation e_s is
/// table[s * A + a] for every latent (latent weights and the constant
/// feature are zero). Throws ConditioningError if the basis Gram matrix is
/// singular.
std::vector<double> tabular_params(const models::NetworkSpec& spec, const RbfBasis& basis,
                                   const std::vector<double>& table);

/// Bundle with Q = q, f = f and pi = policy exactly on a finite environment.
/// q_bound is chosen so q lies in the identity range of the squash; f must
/// lie in [-1, 1] for the same reason.
models::ModelBundle embed_tabular(const envs::FiniteParams& env, const std::vector<double>& q,
                                  const std::vector<double>& f,
                                  const envs::TabularPolicy& policy, std::size_t latent_dim);

}  // namespace p4l::solver
