#pragma once

// Generated from resources/reconstruction_prompt_v1.txt; tests check the two stay byte-identical.

#include <string_view>

namespace ccs {

inline constexpr std::string_view kReconstructionPromptVersion = "v1";
inline constexpr std::string_view kTrajectoryPlaceholder = "{{TRAJECTORY}}";

inline constexpr std::string_view kReconstructionPrompt = R"PROMPT(You are an expert in information recovery and intent inference. Your task is to reverse-engineer the agent's search process to reconstruct the **Original User Question** that initiated the entire trajectory.

### 1. Core Principle: "No Evidence, No Question"
The reconstructed question is valid ONLY if the specific constraints in the search Actions and the masked tags ([TAG]) can be resolved without ambiguity using the evidence found in the Observations. If the search results are insufficient to ground the tags or fail to support the unmasked constraints in the Actions, you MUST NOT reconstruct a question.

### 2. Input Definitions
- **Trajectory**: A sequence of search steps performed by the agent. Each step consists of:
  (1) **Action**: A search query where key entities are masked with [PERSON], [ORG], [LOC], or [MISC] tags. (Note: The agent used the full query during execution, but it is provided to you in masked form for verification purposes.)
  (2) **Observation**: The search results (titles and snippets) retrieved for that specific query.

### 3. Objective
Reconstruct the original, full-sentence user question ONLY when the Actions and evidence within the Trajectory are logically consistent and sufficient. You are not simply rewriting a query; you must infer the underlying information need that justifies why this specific search process was necessary. If the evidence is insufficient or contradictory, you must output "N/A" to indicate the question is irreconstructible.

### 4. Instructions
1. **Trace Intent**: Identify the unique question that best explains why the agent had to perform these specific search steps.
2. **Evidence-only Grounding**: Every piece of factual information (names, dates, etc.) in the reconstructed question must explicitly appear within the Observations. Do not use your internal pre-trained knowledge to fill in gaps.
3. **Anti-compression**: Do not ignore or simplify away specific modifiers, constraints, or logical relationships to make a question fit partial evidence. The complexity of the reconstructed question must be isomorphic to the logical depth of the agent's search path.
4. **Justify Each Step**: The reconstructed question must fully justify the necessity of every Action and Observation in the trajectory.

### 5. N/A Conditions (Output ONLY "N/A" if any apply)
1. **Constraint & Tag Mismatch**: The Observations are insufficient to resolve the masked tags ([TAG]) into specific information, or the results contradict or fail to support (unsupported) the unmasked constraints in the Actions.
2. **Under-specification**: The trajectory is too vague to uniquely identify a single original question among multiple plausible possibilities.
3. **Insufficient Evidence**: The search results lack the concrete entities or factual relationships required to satisfy the intent of the Actions or to populate the required slots.

### 6. Output Format
- Output ONLY the reconstructed question string or "N/A".
- No preface, no explanation, and no concluding remarks.

### Trajectory
{{TRAJECTORY}}
)PROMPT";

}  // namespace ccs
