#pragma once

#include <map>
#include <string>

namespace dsai {

// Deterministic single-pass substitution of {name} placeholders. Bound values
// are emitted verbatim (no re-expansion). Unbound placeholders are errors.
std::string render_template(const std::string& template_text,
                            const std::map<std::string, std::string>& bindings);

// Built-in prompt templates, one per LLM-facing operation. Prompt text is
// configuration: callers may override any entry before rendering.
class PromptRegistry {
 public:
  PromptRegistry();  // loads the built-ins

  bool has(const std::string& id) const;
  void set(const std::string& id, std::string text);
  const std::string& get(const std::string& id) const;

  std::string render(const std::string& id,
                     const std::map<std::string, std::string>& bindings) const;

 private:
  std::map<std::string, std::string> templates_;
};

}  // namespace dsai
