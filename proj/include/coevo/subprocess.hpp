#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "coevo/error.hpp"

namespace coevo::proc {

namespace detail {

inline void ignore_sigpipe_once() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);  // a dead child must not kill the engine
    return true;
  }();
  (void)done;
}

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

// A child process spoken to over line-delimited stdin/stdout with deadlines.
// stderr goes to /dev/null. The destructor kills and reaps.
class LineProcess {
 public:
  enum class ReadResult { ok, eof, timeout };

  explicit LineProcess(const std::vector<std::string>& argv) {
    if (argv.empty()) raise(Errc::launch_failure, "empty command");
    detail::ignore_sigpipe_once();

    int in_pipe[2], out_pipe[2], status_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0 || ::pipe(status_pipe) != 0)
      raise(Errc::launch_failure, "pipe: " + std::string(std::strerror(errno)));
    ::fcntl(status_pipe[1], F_SETFD, FD_CLOEXEC);

    pid_ = ::fork();
    if (pid_ < 0) raise(Errc::launch_failure, "fork: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      const int devnull = ::open("/dev/null", O_WRONLY);
      if (devnull >= 0) ::dup2(devnull, STDERR_FILENO);
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::close(status_pipe[0]);

      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      ::execvp(args[0], args.data());
      const int err = errno;  // exec failed; report through the CLOEXEC pipe
      (void)!::write(status_pipe[1], &err, sizeof(err));
      ::_exit(127);
    }

    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(status_pipe[1]);
    in_fd_ = in_pipe[1];
    out_fd_ = out_pipe[0];

    int err = 0;
    const ssize_t n = ::read(status_pipe[0], &err, sizeof(err));
    ::close(status_pipe[0]);
    if (n > 0) {
      reap();
      raise(Errc::launch_failure,
            "cannot start '" + argv[0] + "': " + std::strerror(err));
    }

    ::fcntl(in_fd_, F_SETFL, O_NONBLOCK);
    ::fcntl(out_fd_, F_SETFL, O_NONBLOCK);
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() {
    close_fds();
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      reap();
    }
  }

  // False when the pipe is broken or the deadline passes.
  bool write_line(std::string_view line, int timeout_ms) {
    std::string msg(line);
    msg.push_back('\n');
    std::size_t off = 0;
    const auto deadline = detail::now_ms() + timeout_ms;
    while (off < msg.size()) {
      const ssize_t n = ::write(in_fd_, msg.data() + off, msg.size() - off);
      if (n > 0) {
        off += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        const auto remaining = deadline - detail::now_ms();
        if (remaining <= 0) return false;
        struct pollfd pfd{in_fd_, POLLOUT, 0};
        if (::poll(&pfd, 1, static_cast<int>(remaining)) <= 0) return false;
        continue;
      }
      return false;  // EPIPE or a real error
    }
    return true;
  }

  ReadResult read_line(std::string& out, int timeout_ms) {
    const auto deadline = detail::now_ms() + timeout_ms;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        out = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!out.empty() && out.back() == '\r') out.pop_back();
        return ReadResult::ok;
      }
      if (buffer_.size() > kMaxBuffer) return ReadResult::eof;  // stream gone rogue

      const auto remaining = deadline - detail::now_ms();
      if (remaining <= 0) return ReadResult::timeout;
      struct pollfd pfd{out_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(remaining));
      if (pr == 0) return ReadResult::timeout;
      if (pr < 0) return ReadResult::eof;

      char chunk[4096];
      const ssize_t n = ::read(out_fd_, chunk, sizeof(chunk));
      if (n > 0) buffer_.append(chunk, static_cast<std::size_t>(n));
      else if (n == 0) return ReadResult::eof;
      else if (errno != EAGAIN && errno != EWOULDBLOCK) return ReadResult::eof;
    }
  }

 private:
  static constexpr std::size_t kMaxBuffer = 4 << 20;

  void close_fds() {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    in_fd_ = out_fd_ = -1;
  }

  void reap() {
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  ::pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
};

}  // namespace coevo::proc
