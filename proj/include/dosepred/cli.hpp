#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace dosepred::cli {

/// Exit codes shared by every subcommand: 0 success, 1 validation failure,
/// 2 usage error (applied by the argument parser in the tool).
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::uint64_t seed = 42;
  int threads = 1;
  std::filesystem::path out = ".";
};

int run_phantom_generate(int count, int size, const GlobalOptions& opt);
int run_evaluate(const std::filesystem::path& pred_dir,
                 const std::filesystem::path& gt_dir, const GlobalOptions& opt);
int run_gradcheck(const std::string& target, const GlobalOptions& opt);
int run_train_demo(const std::filesystem::path& data_dir,
                   const GlobalOptions& opt);
int run_dvh_plot(const std::filesystem::path& patient_dir,
                 const std::filesystem::path& pred_file,
                 const GlobalOptions& opt);

}  // namespace dosepred::cli
