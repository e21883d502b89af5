#include <CLI11.hpp>
#include <exception>
#include <iostream>

#include "dosepred/cli.hpp"

using dosepred::cli::GlobalOptions;

int main(int argc, char** argv) {
  CLI::App app{"Radiotherapy dose prediction toolkit"};
  app.require_subcommand(1);

  GlobalOptions opt;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "Master RNG seed");
  app.add_option("--threads", opt.threads, "Worker thread count")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", opt.out, "Output directory");

  auto* phantom = app.add_subcommand("phantom", "Synthetic patient tools");
  phantom->fallthrough();
  phantom->require_subcommand(1);
  int count = 5, size = 32;
  auto* gen = phantom->add_subcommand("generate", "Write a phantom cohort");
  gen->fallthrough();
  gen->add_option("--count", count, "Number of patients")
      ->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Cubic grid extent")
      ->check(CLI::PositiveNumber);

  std::string pred_dir, gt_dir;
  auto* eval = app.add_subcommand("evaluate", "Score predictions against "
                                              "reference doses");
  eval->fallthrough();
  eval->add_option("--pred", pred_dir, "Prediction directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--gt", gt_dir, "Reference patient directory")
      ->required()
      ->check(CLI::ExistingDirectory);

  std::string target = "loss";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient "
                                             "verification");
  gc->fallthrough();
  gc->add_option("--target", target, "loss | dca | net | negative-control");

  std::string data_dir;
  auto* td = app.add_subcommand("train-demo", "Short demonstration training "
                                              "run");
  td->fallthrough();
  td->add_option("--data", data_dir, "Directory with train/ and val/ cohorts")
      ->required()
      ->check(CLI::ExistingDirectory);

  std::string patient_dir, pred_file;
  auto* dp = app.add_subcommand("dvh-plot", "Dose-volume histogram CSV and "
                                            "SVG");
  dp->fallthrough();
  dp->add_option("--patient", patient_dir, "Patient directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  dp->add_option("--pred", pred_file, "Predicted dose CSV")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? dosepred::cli::kExitOk
                                  : dosepred::cli::kExitUsage;
  }
  if (!config_path.empty()) opt.config = config_path;

  try {
    if (gen->parsed()) return dosepred::cli::run_phantom_generate(count, size, opt);
    if (eval->parsed()) return dosepred::cli::run_evaluate(pred_dir, gt_dir, opt);
    if (gc->parsed()) return dosepred::cli::run_gradcheck(target, opt);
    if (td->parsed()) return dosepred::cli::run_train_demo(data_dir, opt);
    if (dp->parsed()) return dosepred::cli::run_dvh_plot(patient_dir, pred_file, opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dosepred::cli::kExitValidation;
  }
  return dosepred::cli::kExitUsage;
}
