#pragma once

#include <random>

#include "dlmpc/mpc_problem.hpp"

namespace dlmpc::testing {

inline SystemModel scalar_model(double a, double b) {
  return SystemModel(SubsystemPartition({1}, {1}), Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b));
}

/// sum_t ||x_i(t)||^2 + ||u_i(t)||^2 per subsystem, x_0 excluded.
inline MpcProblem separable_problem(const SystemModel& model, int steps) {
  MpcProblem mp(model, steps);
  const HorizonSpec& h = mp.horizon();
  const SubsystemPartition& part = model.partition();
  for (int i = 0; i < part.count(); ++i) {
    for (int t = 1; t <= steps; ++t) {
      QuadraticTerm term;
      term.owner = i;
      for (int k = 0; k < part.state_dim(i); ++k) term.indices.push_back(h.x_row(t, part.state_offset(i) + k));
      term.weight = Matrix::Identity(part.state_dim(i), part.state_dim(i));
      mp.add_cost(term);
    }
    for (int t = 0; t < steps; ++t) {
      QuadraticTerm term;
      term.owner = i;
      for (int k = 0; k < part.input_dim(i); ++k) term.indices.push_back(h.u_row(t, part.input_offset(i) + k));
      term.weight = Matrix::Identity(part.input_dim(i), part.input_dim(i));
      mp.add_cost(term);
    }
  }
  mp.set_stage_cost({Matrix::Identity(part.n(), part.n()), Matrix::Identity(part.p(), part.p())});
  return mp;
}

inline Vector uniform_state(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector x(n);
  for (int k = 0; k < n; ++k) x(k) = -1.0 + 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return x;
}

}  // namespace dlmpc::testing
