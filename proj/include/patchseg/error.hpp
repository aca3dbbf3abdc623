#pragma once

#include <stdexcept>
#include <string>

namespace patchseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable input files.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Non-manifold edges, disconnected meshes, degenerate patches.
class TopologyError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

// Vertex/record lookups outside the valid set.
class LookupError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchseg
