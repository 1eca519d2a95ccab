// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dst/dst.hpp"

namespace dst::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

/// Runs the command line. Streams are injectable for testing.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err);

/// Incremental tracking over line-oriented input. A line is either a command
/// (":reset", ":quit"), "system: <text>" / "user: <text>", or bare text that
/// alternates system, user, system, ... from the start of each dialogue. One
/// output line per word: role, word, current goal estimate.
void run_track(const Tracker& model, const Database& db, std::istream& in, std::ostream& out);

}  // namespace dst::cli
