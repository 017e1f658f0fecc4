#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lohg/commands.hpp"

// Exit codes: 0 success, 1 failing selftest or gradient check, 2 usage or
// input error, 3 numeric failure.
int main(int argc, char** argv) {
  CLI::App app{"hyperboloid-hypergraph small target detection toolkit"};
  app.require_subcommand(1);

  auto* sc_self = app.add_subcommand("selftest", "Run the numerical invariant battery");
  bool inject_fault = false;
  sc_self->add_flag("--inject-fault", inject_fault)->group("");  // negative control, hidden

  auto* sc_grad =
      app.add_subcommand("gradcheck", "Audit analytic gradients with finite differences");
  std::string module = "all";
  sc_grad->add_option("--module", module, "lorentz, horl, e2e, or all")->capture_default_str();

  auto* sc_gen = app.add_subcommand("gen", "Generate a synthetic scene dataset");
  lohg::cmd::GenOptions gopt;
  sc_gen->add_option("--out", gopt.out, "Output directory")->required();
  sc_gen->add_option("--count", gopt.count, "Image/mask pairs to write")->capture_default_str();
  sc_gen->add_option("--size", gopt.size, "Square extent, multiple of 16")->capture_default_str();
  sc_gen->add_option("--targets", gopt.targets, "Targets per scene")->capture_default_str();
  sc_gen->add_option("--seed", gopt.seed, "Base seed; pair i uses seed+i")->capture_default_str();

  auto* sc_train = app.add_subcommand("train", "Fit the detector on a generated dataset");
  lohg::cmd::TrainOptions topt;
  std::string config_path;
  sc_train->add_option("--data", topt.data, "Dataset directory holding manifest.json")->required();
  sc_train->add_option("--ckpt", topt.ckpt, "Checkpoint output path")->capture_default_str();
  sc_train->add_option("--loss-csv", topt.loss_csv, "Per-step loss CSV output path");
  sc_train->add_option("--config", config_path,
                       "JSON run config; the flags below override its fields");
  lohg::RunConfig fl;
  auto* o_curvature = sc_train->add_option("--curvature", fl.curvature, "Manifold curvature k");
  auto* o_preset = sc_train->add_option("--preset", fl.preset, "Network preset, tiny or full");
  auto* o_input =
      sc_train->add_option("--input", fl.input, "Training resolution; 0 derives from the preset");
  auto* o_lambda =
      sc_train->add_option("--lambda", fl.lambda, "Incidence sparsification strength in [0,1]");
  auto* o_edges =
      sc_train->add_option("--edges", fl.edges, "Hyperedge budget; 0 derives from the preset");
  auto* o_degree_eps =
      sc_train->add_option("--degree-eps", fl.degree_eps, "Degree regularizer before inversion");
  auto* o_ratio = sc_train->add_option("--attention-ratio", fl.attention_ratio,
                                       "Channel bottleneck ratio of the geometric attention");
  auto* o_seed = sc_train->add_option("--seed", fl.seed, "Initialization seed");
  auto* o_precision = sc_train->add_option("--precision", fl.precision, "f32 or f64");
  auto* o_lr = sc_train->add_option("--lr", fl.lr, "SGD learning rate");
  auto* o_steps = sc_train->add_option("--steps", fl.steps, "SGD steps");

  auto* sc_infer = app.add_subcommand("infer", "Run the detector on one image");
  lohg::cmd::InferOptions iopt;
  sc_infer->add_option("--ckpt", iopt.ckpt, "Checkpoint path")->required();
  sc_infer->add_option("--image", iopt.image, "Input PGM image, extents multiples of 16")
      ->required();
  sc_infer->add_option("--out-prefix", iopt.out_prefix, "Output file prefix")
      ->capture_default_str();
  sc_infer->add_option("--tau", iopt.tau, "Binarization threshold in (0,1)")
      ->capture_default_str();
  sc_infer->add_flag("--dump-hypergraph", iopt.dump_hypergraph,
                     "Also write the relation state CSV");

  auto* sc_eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  lohg::cmd::EvalOptions eopt;
  sc_eval->add_option("--pred", eopt.pred, "Directory of predicted masks")->required();
  sc_eval->add_option("--gt", eopt.gt, "Directory of ground-truth masks")->required();
  sc_eval->add_option("--report", eopt.report, "JSON report output path");
  sc_eval->add_option("--csv", eopt.csv, "Per-image CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  std::function<int()> run;
  if (app.got_subcommand(sc_self)) {
    run = [&] { return lohg::cmd::selftest(inject_fault, std::cout); };
  } else if (app.got_subcommand(sc_grad)) {
    run = [&] { return lohg::cmd::gradcheck(module, std::cout); };
  } else if (app.got_subcommand(sc_gen)) {
    run = [&] { return lohg::cmd::gen(gopt, std::cout); };
  } else if (app.got_subcommand(sc_train)) {
    run = [&] {
      if (!config_path.empty()) topt.config = lohg::load_config_file(config_path);
      if (*o_curvature) topt.config.curvature = fl.curvature;
      if (*o_preset) topt.config.preset = fl.preset;
      if (*o_input) topt.config.input = fl.input;
      if (*o_lambda) topt.config.lambda = fl.lambda;
      if (*o_edges) topt.config.edges = fl.edges;
      if (*o_degree_eps) topt.config.degree_eps = fl.degree_eps;
      if (*o_ratio) topt.config.attention_ratio = fl.attention_ratio;
      if (*o_seed) topt.config.seed = fl.seed;
      if (*o_precision) topt.config.precision = fl.precision;
      if (*o_lr) topt.config.lr = fl.lr;
      if (*o_steps) topt.config.steps = fl.steps;
      return lohg::cmd::train(topt, std::cout);
    };
  } else if (app.got_subcommand(sc_infer)) {
    run = [&] { return lohg::cmd::infer(iopt, std::cout); };
  } else {
    run = [&] { return lohg::cmd::eval(eopt, std::cout); };
  }
  return lohg::cmd::guard(run, std::cerr);
}
