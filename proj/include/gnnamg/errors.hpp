#pragma once

#include <stdexcept>
#include <string>

namespace gnnamg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GNNAMG_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

GNNAMG_DEFINE_ERROR(ConstructionError);
GNNAMG_DEFINE_ERROR(DimensionError);
GNNAMG_DEFINE_ERROR(SingularRelaxationError);
GNNAMG_DEFINE_ERROR(SingularMatrixError);
GNNAMG_DEFINE_ERROR(PatternError);
GNNAMG_DEFINE_ERROR(DegenerateRowError);
GNNAMG_DEFINE_ERROR(HierarchyError);
GNNAMG_DEFINE_ERROR(DivergenceError);
GNNAMG_DEFINE_ERROR(GeometryError);
GNNAMG_DEFINE_ERROR(StructureError);
GNNAMG_DEFINE_ERROR(TilingError);
GNNAMG_DEFINE_ERROR(SymbolError);
GNNAMG_DEFINE_ERROR(LossError);
GNNAMG_DEFINE_ERROR(CheckpointError);
GNNAMG_DEFINE_ERROR(IoError);

#undef GNNAMG_DEFINE_ERROR

}  // namespace gnnamg
