#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace esd {

using WarningSink = std::function<void(std::string_view)>;

// Non-fatal conditions (truncated records, short contexts, oversized top_k)
// are reported here. The default sink writes "warning: ..." to stderr.
void warn(std::string_view message);

WarningSink set_warning_sink(WarningSink sink);

/// Collects warnings for the lifetime of the object (used by tests and CLI).
class WarningCapture {
public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(std::string_view needle) const;

private:
  std::vector<std::string> messages_;
  WarningSink previous_;
};

}  // namespace esd
