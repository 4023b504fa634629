#include "hex4d/subprocess.h"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "hex4d/common.h"

namespace hex4d {

namespace {

struct Pipe {
  int rd = -1, wr = -1;
  Pipe() {
    int fds[2];
    if (pipe(fds) != 0) throw IoError("pipe() failed");
    rd = fds[0];
    wr = fds[1];
  }
  ~Pipe() {
    if (rd >= 0) close(rd);
    if (wr >= 0) close(wr);
  }
  void close_rd() {
    if (rd >= 0) close(rd), rd = -1;
  }
  void close_wr() {
    if (wr >= 0) close(wr), wr = -1;
  }
};

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void set_nonblock(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

}  // namespace

SubprocessResult run_subprocess(const std::vector<std::string>& argv, const std::string& input,
                                int timeout_ms) {
  H4D_CHECK(!argv.empty(), "subprocess needs a command");
  H4D_CHECK(timeout_ms > 0, "subprocess timeout must be positive");
  signal(SIGPIPE, SIG_IGN);  // a dying child must not kill the trainer

  Pipe in, out, err;
  pid_t pid = fork();
  if (pid < 0) throw IoError("fork() failed");
  if (pid == 0) {
    dup2(in.rd, STDIN_FILENO);
    dup2(out.wr, STDOUT_FILENO);
    dup2(err.wr, STDERR_FILENO);
    close(in.rd), close(in.wr), close(out.rd), close(out.wr), close(err.rd), close(err.wr);
    std::vector<char*> cargv;
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);
    execvp(cargv[0], cargv.data());
    _exit(127);
  }
  in.close_rd();
  out.close_wr();
  err.close_wr();
  set_nonblock(in.wr);
  set_nonblock(out.rd);
  set_nonblock(err.rd);

  SubprocessResult res;
  size_t written = 0;
  const int64_t deadline = now_ms() + timeout_ms;
  bool timed_out = false;

  while (in.wr >= 0 || out.rd >= 0 || err.rd >= 0) {
    int64_t left = deadline - now_ms();
    if (left <= 0) {
      timed_out = true;
      break;
    }
    pollfd fds[3];
    int n = 0;
    if (in.wr >= 0) fds[n++] = {in.wr, POLLOUT, 0};
    if (out.rd >= 0) fds[n++] = {out.rd, POLLIN, 0};
    if (err.rd >= 0) fds[n++] = {err.rd, POLLIN, 0};
    int rc = poll(fds, static_cast<nfds_t>(n), static_cast<int>(std::min<int64_t>(left, 200)));
    if (rc < 0 && errno != EINTR) break;
    for (int i = 0; i < n; ++i) {
      if (!fds[i].revents) continue;
      if (fds[i].fd == in.wr) {
        if (written >= input.size()) {
          in.close_wr();
          continue;
        }
        ssize_t w = write(in.wr, input.data() + written, input.size() - written);
        if (w > 0)
          written += static_cast<size_t>(w);
        else if (w < 0 && errno != EAGAIN && errno != EINTR)
          in.close_wr();  // child closed stdin early
        if (written >= input.size()) in.close_wr();
      } else {
        char buf[65536];
        int fd = fds[i].fd;
        ssize_t r = read(fd, buf, sizeof buf);
        if (r > 0) {
          (fd == out.rd ? res.out : res.err).append(buf, static_cast<size_t>(r));
        } else if (r == 0 || (r < 0 && errno != EAGAIN && errno != EINTR)) {
          if (fd == out.rd)
            out.close_rd();
          else
            err.close_rd();
        }
      }
    }
  }

  int status = 0;
  if (timed_out) {
    kill(pid, SIGKILL);
    waitpid(pid, &status, 0);
    throw IoError(detail::concat("subprocess '", argv[0], "' timed out after ", timeout_ms,
                                 " ms"));
  }
  // Streams are drained; now wait for exit, still honoring the deadline.
  for (;;) {
    pid_t got = waitpid(pid, &status, WNOHANG);
    if (got == pid) break;
    if (now_ms() > deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw IoError(detail::concat("subprocess '", argv[0], "' timed out after ", timeout_ms,
                                   " ms"));
    }
    usleep(2000);
  }
  if (WIFEXITED(status))
    res.exit_code = WEXITSTATUS(status);
  else
    throw IoError(detail::concat("subprocess '", argv[0], "' terminated abnormally"));
  return res;
}

void wire_put_png(std::string& buf, const std::string& png) {
  buf += "png " + std::to_string(png.size()) + "\n";
  buf += png;
}

std::string WireReader::line() {
  size_t nl = data_.find('\n', pos_);
  if (nl == std::string::npos) throw IoError("wire: truncated header line");
  std::string s = data_.substr(pos_, nl - pos_);
  pos_ = nl + 1;
  return s;
}

std::string WireReader::png() {
  std::string hdr = line();
  if (hdr.rfind("png ", 0) != 0) throw IoError("wire: expected png frame, got '" + hdr + "'");
  size_t n = 0;
  try {
    n = std::stoul(hdr.substr(4));
  } catch (...) {
    throw IoError("wire: bad png length in '" + hdr + "'");
  }
  if (pos_ + n > data_.size()) throw IoError("wire: truncated png payload");
  std::string bytes = data_.substr(pos_, n);
  pos_ += n;
  return bytes;
}

}  // namespace hex4d
