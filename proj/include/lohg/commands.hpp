#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

#include "lohg/config.hpp"

namespace lohg::cmd {

struct GenOptions {
  std::string out;
  int64_t count = 8;
  int64_t size = 64;
  int64_t targets = 3;
  uint64_t seed = 0;
};

struct TrainOptions {
  std::string data;
  std::string ckpt = "model.lohgw";
  std::string loss_csv;
  RunConfig config;
};

struct InferOptions {
  std::string ckpt;
  std::string image;
  std::string out_prefix = "infer";
  bool dump_hypergraph = false;
  double tau = 0.5;
};

struct EvalOptions {
  std::string pred;
  std::string gt;
  std::string report;
  std::string csv;
};

/// Numerical invariant battery; returns 0 when every check passes, 1
/// otherwise. inject_fault appends a deliberately failing check so the
/// reporting path itself stays honest.
int selftest(bool inject_fault, std::ostream& out);

/// Finite-difference audit of the requested module ("lorentz", "horl",
/// "e2e", or "all"); returns 0 on agreement, 1 on tolerance failure.
int gradcheck(const std::string& module, std::ostream& out);

int gen(const GenOptions& opt, std::ostream& out);
int train(const TrainOptions& opt, std::ostream& out);
int infer(const InferOptions& opt, std::ostream& out);
int eval(const EvalOptions& opt, std::ostream& out);

/// Runs fn and maps exceptions to process exit codes: input and format
/// problems exit 2, numeric failures and anything unexpected exit 3.
int guard(const std::function<int()>& fn, std::ostream& err);

}  // namespace lohg::cmd
