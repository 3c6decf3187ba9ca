#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;

/// One request as seen by the scripted server.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).expect("request body is JSON")
    }
}

/// HTTP server on a loopback port that answers with a fixed script of
/// `(status, body)` pairs, repeating the last entry once the script runs out.
pub struct ScriptedServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

pub fn chat_body(text: &str) -> String {
    serde_json::json!({
        "id": "x",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

fn read_request(stream: &mut TcpStream) -> Option<Recorded> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Recorded { method, path, headers, body })
}

impl ScriptedServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                let index = {
                    let mut seen = seen.lock().unwrap();
                    seen.push(req);
                    seen.len() - 1
                };
                let (status, body) = &script[index.min(script.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
                let _ = stream.flush();
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

/// Checks a request body against the chat-completions request shape.
/// Returns a description of the first violation.
pub fn validate_chat_request(v: &Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("body is not an object")?;
    for key in obj.keys() {
        if !["model", "messages", "temperature", "max_tokens"].contains(&key.as_str()) {
            return Err(format!("unexpected key {key}"));
        }
    }
    obj.get("model").and_then(Value::as_str).filter(|m| !m.is_empty()).ok_or("model must be a non-empty string")?;
    obj.get("temperature").and_then(Value::as_f64).ok_or("temperature must be a number")?;
    obj.get("max_tokens").and_then(Value::as_u64).ok_or("max_tokens must be a non-negative integer")?;
    let messages = obj.get("messages").and_then(Value::as_array).ok_or("messages must be an array")?;
    if messages.is_empty() {
        return Err("messages is empty".into());
    }
    for (i, m) in messages.iter().enumerate() {
        let role = m.get("role").and_then(Value::as_str).ok_or(format!("message {i}: role missing"))?;
        if !["system", "user", "assistant"].contains(&role) {
            return Err(format!("message {i}: bad role {role}"));
        }
        match m.get("content") {
            Some(Value::String(_)) => {}
            Some(Value::Array(parts)) => {
                for (j, p) in parts.iter().enumerate() {
                    match p.get("type").and_then(Value::as_str) {
                        Some("text") => {
                            p.get("text")
                                .and_then(Value::as_str)
                                .ok_or(format!("message {i} part {j}: text missing"))?;
                        }
                        Some("image_url") => {
                            p.pointer("/image_url/url")
                                .and_then(Value::as_str)
                                .ok_or(format!("message {i} part {j}: image_url.url missing"))?;
                        }
                        other => return Err(format!("message {i} part {j}: bad type {other:?}")),
                    }
                }
            }
            _ => return Err(format!("message {i}: content must be a string or array")),
        }
    }
    Ok(())
}
