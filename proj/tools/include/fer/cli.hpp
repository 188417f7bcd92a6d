#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "fer/data.hpp"

namespace fer {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Loads a dataset from a FER2013-style CSV (selecting `split`) or from a
/// seven-directory image tree.
Dataset load_dataset(const std::filesystem::path& path, Split split);

/// Entry point shared by the `fer` executable and tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fer
