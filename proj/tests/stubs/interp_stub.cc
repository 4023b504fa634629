// External interpolator stub for the protocol tests. Modes:
//   linear    psi(a, b, gamma) = (1-gamma) a + gamma b
//   garbage   malformed reply
//   fail      nonzero exit
//   hang      never answers
#include <unistd.h>

#include <cstdio>
#include <cstring>
#include <string>

#include "hex4d/consistency.h"

using namespace hex4d;

static std::string read_all_stdin() {
  std::string in;
  char buf[1 << 16];
  ssize_t n;
  while ((n = read(0, buf, sizeof buf)) > 0) in.append(buf, static_cast<size_t>(n));
  return in;
}

int main(int argc, char** argv) {
  std::string mode = argc > 1 ? argv[1] : "linear";
  if (mode == "hang") {
    sleep(30);
    return 0;
  }
  if (mode == "fail") {
    fprintf(stderr, "interp_stub: induced failure\n");
    return 4;
  }

  std::string in = read_all_stdin();
  Tensorf a, b;
  double gamma = 0.0;
  parse_interp_request(in, &a, &b, &gamma);

  std::string reply;
  if (mode == "garbage") {
    reply = "HEX4D-INTERP-R 999\n";
  } else if (mode == "linear") {
    Tensorf x(a.shape);
    for (int64_t i = 0; i < a.size(); ++i)
      x.v[static_cast<size_t>(i)] = static_cast<float>((1.0 - gamma) * a.v[static_cast<size_t>(i)] +
                                                       gamma * b.v[static_cast<size_t>(i)]);
    reply = interp_reply(x);
  } else {
    fprintf(stderr, "interp_stub: unknown mode %s\n", mode.c_str());
    return 2;
  }
  fwrite(reply.data(), 1, reply.size(), stdout);
  fflush(stdout);
  return 0;
}
