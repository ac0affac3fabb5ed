//! Serve the mock generator over the chat-completions wire format and run
//! the endpoint conformance checks against it through the HTTP client.

use std::sync::Arc;

use sgt::backend::conformance::run_conformance;
use sgt::backend::{serve_backend, Client, GenRequest, HttpBackend, HttpConfig, MockGenerator, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::from_toml_str("seed = 1\n[generator.distribution]\nsummary = 0.6\nhint = 0.4\n")?;
    let server = serve_backend(Arc::new(MockGenerator::new(&scenario)), "127.0.0.1:0")?;
    println!("serving at {}", server.base_url());

    let http = HttpBackend::new(HttpConfig::new(server.base_url(), "policy"))?;
    let report = run_conformance(&http, "What is 2 + 2?\n\nProvide supplementary text.");
    for c in &report.checks {
        println!("{:<20} {}", c.name, c.outcome.as_ref().map(|_| "ok".to_string()).unwrap_or_else(|e| e.clone()));
    }

    let client = Client::new(Arc::new(http));
    let req = GenRequest::user("policy", "What is 2 + 2?").prefix("{\"summary\": \"").n(2).temperature(1.0).seed(5);
    for c in client.generate(&req)? {
        println!("sample: {}", c.text);
    }
    if !report.passed() {
        return Err(format!("conformance failed: {:?}", report.failures()).into());
    }
    Ok(())
}
