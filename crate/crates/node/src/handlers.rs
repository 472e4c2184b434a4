//! External activity handlers. A handler receives the work item and
//! answers with the activity's output values.

use std::collections::BTreeMap;
use std::process::Stdio;
use std::time::Duration;

use chainflow_core::canon::canonical_bytes;
use chainflow_core::petrinet::Value;
use chainflow_core::worklist::WorkItem;
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

use crate::config::HandlerSpec;

const COMMAND_TIMEOUT: Duration = Duration::from_secs(30);

pub async fn run(spec: &HandlerSpec, item: &WorkItem) -> Result<BTreeMap<String, Value>, String> {
    match spec {
        HandlerSpec::Mock { outputs } => Ok(outputs.clone()),
        HandlerSpec::Command { program, args } => {
            let input = canonical_bytes(item).map_err(|e| e.to_string())?;
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .kill_on_drop(true)
                .spawn()
                .map_err(|e| format!("cannot start `{program}`: {e}"))?;
            let mut stdin = child.stdin.take().expect("piped");
            stdin.write_all(&input).await.map_err(|e| e.to_string())?;
            drop(stdin);
            let out = tokio::time::timeout(COMMAND_TIMEOUT, child.wait_with_output())
                .await
                .map_err(|_| format!("`{program}` timed out"))?
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                let stderr = String::from_utf8_lossy(&out.stderr);
                return Err(format!("`{program}` exited with {}: {}", out.status, stderr.trim()));
            }
            serde_json::from_slice(&out.stdout).map_err(|e| format!("`{program}` printed invalid outputs: {e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chainflow_core::worklist::WorkStatus;
    use uuid::Uuid;

    fn item() -> WorkItem {
        WorkItem {
            id: "w0".into(),
            case_id: Uuid::nil(),
            model: "M".into(),
            transition: "T".into(),
            role: None,
            inputs: BTreeMap::new(),
            status: WorkStatus::Worklisted,
            tx: None,
            block: None,
            notice: None,
        }
    }

    #[tokio::test]
    async fn mock_returns_configured_outputs() {
        let outputs = BTreeMap::from([("ok".to_string(), Value::Boolean(true))]);
        assert_eq!(run(&HandlerSpec::Mock { outputs: outputs.clone() }, &item()).await.unwrap(), outputs);
    }

    #[tokio::test]
    async fn command_reads_stdout() {
        let spec = HandlerSpec::Command {
            program: "sh".into(),
            args: vec!["-c".into(), r#"cat >/dev/null; echo '{"n": {"integer": 3}}'"#.into()],
        };
        let out = run(&spec, &item()).await.unwrap();
        assert_eq!(out["n"], Value::Integer(3));
    }

    #[tokio::test]
    async fn failing_command_reports_stderr() {
        let spec = HandlerSpec::Command { program: "sh".into(), args: vec!["-c".into(), "echo nope >&2; exit 3".into()] };
        let err = run(&spec, &item()).await.unwrap_err();
        assert!(err.contains("nope"), "{err}");
    }
}
