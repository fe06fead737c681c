// SPDX-License-Identifier: Apache-2.0
// Child processes in their own process group.
#pragma once

#include <sys/types.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flame/common/error.hpp"

namespace flame::deploy {

FLAME_DEFINE_ERROR(SpawnFailed);

struct ExitInfo {
  bool signaled = false;
  int code = 0;    // exit code when !signaled
  int signal = 0;  // terminating signal when signaled

  bool success() const { return !signaled && code == 0; }
  std::string describe() const;
};

class ChildProcess {
 public:
  ChildProcess() = default;
  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  // Kills and reaps a still-running child.
  ~ChildProcess();

  // argv[0] must be a path. The child inherits this environment plus `env`,
  // runs in `cwd` and writes stdout and stderr to `log` (or inherits them
  // when `log` is empty).
  static ChildProcess spawn(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env,
                            const std::filesystem::path& cwd, const std::filesystem::path& log = {});

  pid_t pid() const { return pid_; }
  bool running() const { return pid_ > 0 && !exit_; }
  // Non-blocking reap.
  std::optional<ExitInfo> poll();
  ExitInfo wait();
  // Signals the whole process group.
  void signal(int sig) const;

 private:
  pid_t pid_ = -1;
  std::optional<ExitInfo> exit_;
};

// Path of the running executable.
std::filesystem::path self_executable();

}  // namespace flame::deploy
