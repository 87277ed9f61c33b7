// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <recheck/backend.hpp>
#include <recheck/uncertainty.hpp>

#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>

namespace recheck::cli
{

enum ExitCode : int
{
    ok = 0,
    usage_error = 1,
    backend_failure = 2,
};

struct BackendHandle
{
    std::string kind; // scripted, remote, synth
    std::unique_ptr<Backend> backend;
    std::unique_ptr<Embedder> embedder;
    std::uint64_t seed = 0;
};

/// Parses `scripted:PATH`, `remote:URL` or `synth:SEED`.
[[nodiscard]] BackendHandle make_backend(std::string_view spec);

/// Entry point of the `recheck` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace recheck::cli
