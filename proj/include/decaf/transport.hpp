#pragma once

// Transports for SegmenterSession: a child process spoken to over its
// stdin/stdout, and an in-process loopback around a message handler.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "decaf/protocol.hpp"

namespace decaf {

/// Runs `command` through /bin/sh and exchanges lines with it.
class ChildProcessTransport : public Transport {
 public:
  explicit ChildProcessTransport(const std::string& command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw SegmenterError("spawn", std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw SegmenterError("spawn", std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) throw SegmenterError("spawn", std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  ChildProcessTransport(const ChildProcessTransport&) = delete;
  ChildProcessTransport& operator=(const ChildProcessTransport&) = delete;

  ~ChildProcessTransport() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      // Closing stdin asks the child to exit; give it a moment before killing.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  void send(const std::string& line) override {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SegmenterError("disconnected", std::string("write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> receive(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (eof_) return std::nullopt;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw SegmenterError("timeout", "no reply from segmenter in time");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw SegmenterError("disconnected", std::strerror(errno));
      }
      if (r == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SegmenterError("disconnected", std::strerror(errno));
      }
      if (n == 0) {
        eof_ = true;
        if (!buffer_.empty()) {
          std::string line = std::move(buffer_);
          buffer_.clear();
          return line;
        }
        return std::nullopt;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
  bool eof_ = false;
};

/// Feeds every sent line to `handler` and queues the lines it answers with.
class LoopbackTransport : public Transport {
 public:
  using Handler = std::function<std::vector<std::string>(const std::string&)>;

  explicit LoopbackTransport(Handler handler) : handler_(std::move(handler)) {}

  void send(const std::string& line) override {
    sent_.push_back(line);
    for (auto& reply : handler_(line)) pending_.push_back(std::move(reply));
  }

  std::optional<std::string> receive(std::chrono::milliseconds) override {
    if (pending_.empty()) return std::nullopt;
    std::string line = std::move(pending_.front());
    pending_.pop_front();
    received_.push_back(line);
    return line;
  }

  const std::vector<std::string>& sent() const { return sent_; }
  const std::vector<std::string>& received() const { return received_; }
  std::size_t pending() const { return pending_.size(); }

 private:
  Handler handler_;
  std::deque<std::string> pending_;
  std::vector<std::string> sent_;
  std::vector<std::string> received_;
};

}  // namespace decaf
