#pragma once

// Local experiment queue: at most floor(total / per) child processes at once;
// as each finishes the next variant takes its place.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

extern char** environ;

namespace rlstack {

class LaunchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ResourcePlan {
  std::size_t slots_total = 1;
  std::size_t slots_per = 1;

  std::size_t concurrency() const {
    if (slots_per == 0) throw LaunchError("slots per experiment must be positive");
    std::size_t c = slots_total / slots_per;
    if (c == 0) throw LaunchError("slots-total is smaller than slots-per");
    return c;
  }
};

struct Job {
  std::string name;
  std::vector<std::string> argv;
  /// stdout and stderr of the child go here.
  std::filesystem::path log_path;
};

struct JobResult {
  std::string name;
  int exit_code = -1;
  double start_s = 0, end_s = 0;
  bool ok() const { return exit_code == 0; }
};

struct QueueTrace {
  std::vector<JobResult> results;
  /// (time, running count) after every start and finish.
  std::vector<std::pair<double, std::size_t>> events;
  std::size_t max_running = 0;
};

namespace detail {

inline pid_t spawn_job(const Job& job) {
  if (job.argv.empty()) throw LaunchError("job " + job.name + " has no command");
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  if (!job.log_path.empty()) {
    posix_spawn_file_actions_addopen(&fa, 1, job.log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, 1, 2);
  }
  std::vector<char*> args;
  for (const auto& a : job.argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  int rc = posix_spawn(&pid, args[0], &fa, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) return -1;
  return pid;
}

}  // namespace detail

/// Runs every job exactly once; failures are recorded and the queue continues.
inline QueueTrace run_queue(const std::vector<Job>& jobs, std::size_t concurrency) {
  if (concurrency == 0) throw LaunchError("concurrency must be positive");
  auto t0 = std::chrono::steady_clock::now();
  auto now = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  QueueTrace trace;
  trace.results.resize(jobs.size());
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  while (next < jobs.size() || !running.empty()) {
    while (running.size() < concurrency && next < jobs.size()) {
      auto& res = trace.results[next];
      res.name = jobs[next].name;
      res.start_s = now();
      pid_t pid = detail::spawn_job(jobs[next]);
      if (pid < 0) {
        res.exit_code = 127;
        res.end_s = res.start_s;
      } else {
        running[pid] = next;
        trace.events.emplace_back(res.start_s, running.size());
        trace.max_running = std::max(trace.max_running, running.size());
      }
      ++next;
    }
    if (running.empty()) continue;
    int status = 0;
    pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) {
      if (errno == EINTR) continue;
      throw LaunchError(std::string("waitpid failed: ") + std::strerror(errno));
    }
    auto it = running.find(pid);
    if (it == running.end()) continue;
    auto& res = trace.results[it->second];
    res.end_s = now();
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    running.erase(it);
    trace.events.emplace_back(res.end_s, running.size());
  }
  return trace;
}

}  // namespace rlstack
