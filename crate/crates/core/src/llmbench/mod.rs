//! Zero- and few-shot benchmarking of chat-completion models.

mod bench;
mod fewshot;
mod prompt;
mod provider;

pub use bench::{
    parse_label, read_verdict_log, run_benchmark, write_verdict_log, BenchmarkOptions, BenchmarkResult, ConstantModel,
    LLMVerdict, OracleModel,
};
pub use fewshot::{select_fewshot, FewShotSet};
pub use prompt::{build_prompt, escape, parse_prompt, prompt_for, unescape, ParsedPrompt, PromptTemplate, ShotMode, CLOSE, OPEN};
pub use provider::{
    ApiFormat, ChatModel, ChatResponse, HttpResponse, Provider, ProviderConfig, RateLimiter, ResponseCache, Secret,
    Transport, UreqTransport,
};

#[cfg(test)]
mod tests;
