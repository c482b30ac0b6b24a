#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace hdprobe {

using WarningSink = std::function<void(std::string_view)>;

// Emits a warning through the installed sink (stderr by default).
void warn(std::string_view message);

// Installs `sink` and returns the previous one. An empty sink restores stderr.
WarningSink set_warning_sink(WarningSink sink);

// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const noexcept { return messages_; }
  std::size_t count() const noexcept { return messages_.size(); }

 private:
  std::vector<std::string> messages_;
  WarningSink previous_;
};

}  // namespace hdprobe
