#pragma once

#include <string>
#include <vector>

namespace hex4d {

struct SubprocessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs argv with `input` on stdin and captures stdout/stderr. The deadline
// covers the whole exchange; on expiry the child is killed and IoError thrown.
// Spawn failures and abnormal termination also raise IoError.
SubprocessResult run_subprocess(const std::vector<std::string>& argv, const std::string& input,
                                int timeout_ms);

// Line-oriented wire helpers shared by the score/interpolator protocols:
// binary blocks are framed as "png <nbytes>\n" followed by the raw bytes.
void wire_put_png(std::string& buf, const std::string& png);

class WireReader {
 public:
  explicit WireReader(const std::string& data) : data_(data) {}
  // Next newline-terminated line (without the newline). Throws IoError at EOF.
  std::string line();
  // Parses a "png <nbytes>" frame and returns the payload bytes.
  std::string png();
  bool eof() const { return pos_ >= data_.size(); }

 private:
  const std::string& data_;
  size_t pos_ = 0;
};

}  // namespace hex4d
