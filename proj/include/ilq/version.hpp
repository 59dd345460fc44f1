#pragma once

#define ILQ_VERSION "0.1.0"

namespace ilq {
inline const char* version() { return ILQ_VERSION; }
}
